"""Reference implementations for differential testing.

Nothing here goes through column strips, dual passes or the +/-1 dot
product the kernels use. Convolutions slide over the whole plane; the
layer-level path uses the identity

    sum_t s_t * a_t = 2 * sum_{s_t = +1} a_t - sum_t a_t

so a shared bug in the kernels' sign handling cannot cancel out here.
16b/32b wrapping is done with explicit modular arithmetic on int64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fxcore import Accum16Plane, OverflowLog, PackedKernel3x3, Plane, kernel_masks, unpack_row_bits
from .model_io import Model
from .netgraph import LayerKind


def _wrap(x: np.ndarray, bits: int) -> np.ndarray:
    half = 1 << (bits - 1)
    return ((np.asarray(x, dtype=np.int64) + half) & ((1 << bits) - 1)) - half


def scalar_conv3(pixels, kernel_bits: int) -> list[list[int]]:
    """Pure-Python triple loop; rows of ints in, rows of 16b ints out."""
    h, w = len(pixels), len(pixels[0])
    out = []
    for y in range(h - 2):
        row = []
        for x in range(w - 2):
            s = 0
            for dy in range(3):
                for dx in range(3):
                    a = int(pixels[y + dy][x + dx])
                    s += a if (kernel_bits >> (3 * dy + dx)) & 1 else -a
            row.append(((s + 32768) & 0xFFFF) - 32768)
        out.append(row)
    return out


def naive_conv3_array(x, masks) -> np.ndarray:
    """Valid 3x3 correlation by sliding the whole plane once per tap.

    x: (..., H, W) activations; masks: bool (..., 3, 3), broadcast over the
    leading axes. Returns int16 (..., H-2, W-2).
    """
    x = np.asarray(x, dtype=np.int64)
    h, w = x.shape[-2:]
    if h < 3 or w < 3:
        raise ValueError(f"plane {w}x{h} is smaller than the 3x3 window")
    masks = np.asarray(masks, dtype=bool)
    acc = np.zeros(np.broadcast_shapes(x.shape[:-2], masks.shape[:-2]) + (h - 2, w - 2), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            a = x[..., dy : dy + h - 2, dx : dx + w - 2]
            acc = _wrap(acc + np.where(masks[..., dy, dx, None, None], a, -a), 16)
    return acc.astype(np.int16)


def naive_conv3(plane: Plane, kernel: PackedKernel3x3) -> Accum16Plane:
    if plane.width < 3 or plane.height < 3:
        raise ValueError(f"plane {plane.width}x{plane.height} is smaller than the 3x3 window")
    return Accum16Plane.from_array(naive_conv3_array(plane.data, kernel_masks(kernel.bits)))


def naive_conv3_layer(x, kernel_words) -> np.ndarray:
    """(C_in, H, W) padded input, (C_out, C_in) words -> int16 (C_out, C_in, H-2, W-2)."""
    x = np.asarray(x, dtype=np.float64)
    c_in, h, w = x.shape
    cols = np.stack(
        [x[:, dy : dy + h - 2, dx : dx + w - 2].reshape(c_in, -1) for dy in range(3) for dx in range(3)],
        axis=1,
    )  # (C_in, 9, P)
    plus = kernel_masks(kernel_words).reshape(kernel_words.shape + (9,)).astype(np.float64)
    positive = np.matmul(np.moveaxis(plus, 0, 1), cols)  # (C_in, C_out, P)
    total = cols.sum(axis=1)[:, None, :]
    sums = np.rint(2 * positive - total).astype(np.int64)
    out = _wrap(np.moveaxis(sums, 0, 1), 16).astype(np.int16)
    return out.reshape(kernel_words.shape + (h - 2, w - 2))


def naive_accumulate(partials, group_size: int = 16, overflow: OverflowLog | None = None) -> np.ndarray:
    """Running 16b sum per group of maps, flushed into a 32b total; axis 0 is maps."""
    partials = np.asarray(partials, dtype=np.int64)
    if partials.shape[0] == 0:
        raise ValueError("nothing to accumulate")
    total = np.zeros(partials.shape[1:], dtype=np.int64)
    group = np.zeros_like(total)
    wrapped = np.zeros(partials.shape[1:], dtype=bool)
    for n, p in enumerate(partials):
        exact = group + p
        group = _wrap(exact, 16)
        wrapped |= group != exact
        if (n + 1) % group_size == 0 or n + 1 == partials.shape[0]:
            total = _wrap(total + group, 32)
            if overflow is not None:
                overflow.record(f"oracle group {n // group_size}", int(wrapped.sum()))
            group = np.zeros_like(total)
            wrapped[:] = False
    return total.astype(np.int32)


def naive_quad_add(acc, partial) -> np.ndarray:
    acc, partial = np.asarray(acc), np.asarray(partial)
    if acc.shape != partial.shape:
        raise ValueError("shape mismatch")
    out = [((int(a) + int(p) + (1 << 31)) % (1 << 32)) - (1 << 31) for a, p in zip(acc.ravel(), partial.ravel())]
    return np.array(out, dtype=np.int32).reshape(acc.shape)


def naive_activate(acc, biases, shifts) -> np.ndarray:
    """Per-channel floor(acc + bias) / 2**shift, clamped to [0, 255]; axis 0 is channels."""
    acc = np.asarray(acc, dtype=np.int64)
    out = np.empty(acc.shape, dtype=np.uint8)
    for c in range(acc.shape[0]):
        y = (acc[c] + int(biases[c])) // (2 ** int(shifts[c]))
        out[c] = np.minimum(np.maximum(y, 0), 255)
    return out


def naive_maxpool(x) -> np.ndarray:
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError("odd dimensions")
    best = x[..., 0::2, 0::2]
    for dy, dx in ((0, 1), (1, 0), (1, 1)):
        best = np.maximum(best, x[..., dy::2, dx::2])
    return best


def naive_dense_sums(x, packed_rows, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if x.size != length:
        raise ValueError(f"input length {x.size} does not match row length {length}")
    plus = unpack_row_bits(packed_rows, length).astype(np.int64)
    return _wrap(2 * (plus @ x) - x.sum(), 32).astype(np.int32)


def naive_svm(x, packed_rows, length: int, biases) -> np.ndarray:
    sums = naive_dense_sums(x, packed_rows, length).astype(np.int64)
    return _wrap(sums + np.asarray(biases, dtype=np.int64), 32).astype(np.int32)


@dataclass
class NaiveResult:
    scores: np.ndarray
    trace: list[np.ndarray] = field(default_factory=list)

    @property
    def label(self) -> int:
        return int(np.argmax(self.scores))


def _first_input(image, input_shape) -> np.ndarray:
    if isinstance(image, (list, tuple)):
        image = np.stack([p.data if hasattr(p, "data") else np.asarray(p) for p in image])
    x = np.asarray(image)
    c, h, w = input_shape
    if x.shape == (c, h + 2, w + 2):
        return x.astype(np.int64)
    if x.shape == (c, h, w):
        out = np.zeros((c, h + 2, w + 2), dtype=np.int64)
        out[:, 1:-1, 1:-1] = x
        return out
    raise ValueError(f"image shape {x.shape} does not fit input {input_shape}")


def fixed_forward_naive(model: Model, image, overflow: OverflowLog | None = None) -> NaiveResult:
    """Whole network on the reference kernels; must match engine.forward exactly."""
    x = _first_input(image, model.spec.input_shape)
    bordered = True
    result = NaiveResult(np.zeros(0, dtype=np.int32))
    for i, layer, _, params in model.weighted():
        if not bordered and layer.kind is LayerKind.CONV3:
            x = np.pad(x, ((0, 0), (1, 1), (1, 1)))
            bordered = True
        if bordered and layer.kind is not LayerKind.CONV3:
            x = x[:, 1:-1, 1:-1]
        if layer.kind is LayerKind.CONV3:
            partials = naive_conv3_layer(x, params.weights)
            acc = naive_accumulate(np.moveaxis(partials, 1, 0), 16, overflow)
            x = naive_activate(acc, params.biases, params.shifts)
        elif layer.kind is LayerKind.MAXPOOL2:
            x = naive_maxpool(x)
        elif layer.kind is LayerKind.DENSE:
            sums = naive_dense_sums(x.reshape(-1), params.weights, params.fan_in)
            x = naive_activate(sums, params.biases, params.shifts).reshape(-1, 1, 1)
        else:
            x = naive_svm(x.reshape(-1), params.weights, params.fan_in, params.biases)
            result.scores = x
        bordered = False
        result.trace.append(x.astype(np.uint8) if x.dtype != np.int32 else x)
    return result


# -- floating point --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FloatPlane:
    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.size != self.width * self.height:
            raise ValueError("data length does not match width x height")
        if not np.isfinite(data).all():
            raise ValueError("float plane values must be finite")
        data = data.reshape(self.height, self.width).copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_plane(cls, plane: Plane) -> "FloatPlane":
        return cls(plane.width, plane.height, plane.data)


def fold_biases(model: Model) -> list[np.ndarray]:
    """Real-valued bias of every weighted layer in activation units.

    A fixed layer computes floor((acc + b) / 2**s); its real counterpart is
    relu(acc * 2**-s + b * 2**-s), so the folded bias is b * 2**-s (the SVM
    layer has s = 0).
    """
    return [p.biases.astype(np.float64) * np.exp2(-p.shifts.astype(np.float64)) for p in model.layers]


def float_forward(model: Model, image, folded_biases: list[np.ndarray] | None = None) -> np.ndarray:
    """Real-arithmetic evaluation of the same network: +/-1 weights, ReLU, no rounding or saturation."""
    if folded_biases is None:
        folded_biases = fold_biases(model)
    if isinstance(image, (list, tuple)):
        image = np.stack([p.data if hasattr(p, "data") else np.asarray(p) for p in image])
    x = np.asarray(image, dtype=np.float64)
    c, h, w = model.spec.input_shape
    if x.shape == (c, h, w):
        x = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    elif x.shape != (c, h + 2, w + 2):
        raise ValueError(f"image shape {x.shape} does not fit input {model.spec.input_shape}")
    bordered = True
    biases = iter(folded_biases)
    scores = None
    for _, layer, _, params in model.weighted():
        if not bordered and layer.kind is LayerKind.CONV3:
            x = np.pad(x, ((0, 0), (1, 1), (1, 1)))
            bordered = True
        if bordered and layer.kind is not LayerKind.CONV3:
            x = x[:, 1:-1, 1:-1]
        if layer.kind is LayerKind.CONV3:
            hh, ww = x.shape[1] - 2, x.shape[2] - 2
            weights = np.where(kernel_masks(params.weights), 1.0, -1.0)  # (C_out, C_in, 3, 3)
            acc = np.zeros((weights.shape[0], hh, ww))
            for dy in range(3):
                for dx in range(3):
                    acc += np.einsum("oi,ihw->ohw", weights[..., dy, dx], x[:, dy : dy + hh, dx : dx + ww])
            scale = np.exp2(-params.shifts.astype(np.float64))[:, None, None]
            x = np.maximum(acc * scale + next(biases)[:, None, None], 0.0)
        elif layer.kind is LayerKind.MAXPOOL2:
            x = naive_maxpool(x)
        else:
            weights = np.where(unpack_row_bits(params.weights, params.fan_in), 1.0, -1.0)
            acc = weights @ x.reshape(-1)
            if layer.kind is LayerKind.DENSE:
                scale = np.exp2(-params.shifts.astype(np.float64))
                x = np.maximum(acc * scale + next(biases), 0.0).reshape(-1, 1, 1)
            else:
                scores = acc + next(biases)
        bordered = False
    return scores


# -- comparison harness ----------------------------------------------------


@dataclass(frozen=True)
class Mismatch:
    layer: int  # 1-based expanded layer index
    kind: str
    index: tuple[int, ...]
    expected: int
    actual: int

    def __str__(self):
        return (
            f"layer {self.layer} ({self.kind}) differs at {self.index}: "
            f"reference {self.expected}, pipeline {self.actual}"
        )


def first_mismatch(model: Model, pipeline_trace, reference_trace) -> Mismatch | None:
    kinds = [l.kind.value for l in model.spec.expanded()]
    for n, (got, want) in enumerate(zip(pipeline_trace, reference_trace)):
        got, want = np.asarray(got), np.asarray(want)
        if got.shape != want.shape:
            return Mismatch(n + 1, kinds[n], (), -1, -1)
        diff = np.argwhere(got.astype(np.int64) != want.astype(np.int64))
        if diff.size:
            idx = tuple(int(v) for v in diff[0])
            return Mismatch(n + 1, kinds[n], idx, int(want[idx]), int(got[idx]))
    if len(pipeline_trace) != len(reference_trace):
        n = min(len(pipeline_trace), len(reference_trace))
        return Mismatch(n + 1, kinds[n] if n < len(kinds) else "?", (), -1, -1)
    return None
