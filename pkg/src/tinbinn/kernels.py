"""Functional models of the custom vector ALU operations and layer primitives.

The convolution path is organised the way the accelerator consumes data:
a plane is cut into 8-byte-wide column strips whose base advances by 4
bytes, and every strip is traversed twice. The first traversal produces the
output columns at byte offsets 0 and 1, the second at offsets 2 and 3.

Every public operation has an array-level twin (``*_array`` or
``conv_layer``) that broadcasts over leading axes; the engine uses those
so a whole layer runs as a handful of numpy calls.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fxcore import (
    INT16_MAX,
    INT16_MIN,
    Accum16Plane,
    Accum32Plane,
    OverflowLog,
    PackedDenseRow,
    PackedKernel3x3,
    Plane,
    kernel_masks,
    unpack_row_bits,
    wrap32,
)

STRIP_BYTES = 8
STRIP_ADVANCE = 4
DEFAULT_GROUP = 16
MAX_SHIFT = 31


class Pass(enum.Enum):
    FIRST = (0, 1)
    SECOND = (2, 3)

    @property
    def offsets(self) -> tuple[int, int]:
        return self.value


@dataclass(frozen=True, eq=False)
class ColumnStrip:
    """Eight consecutive activations per row, starting at an aligned column."""

    base_x: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.base_x % STRIP_ADVANCE:
            raise ValueError(f"strip base {self.base_x} is not a multiple of {STRIP_ADVANCE}")
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[1] != STRIP_BYTES:
            raise ValueError(f"strip rows must each hold {STRIP_BYTES} bytes, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() > 255):
            raise ValueError("strip bytes must be 8b unsigned")
        data = data.astype(np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_plane(cls, plane: Plane, base_x: int) -> "ColumnStrip":
        """Cut a strip out of a plane; bytes past the right edge read as zero."""
        buf = np.zeros((plane.height, STRIP_BYTES), dtype=np.uint8)
        cols = plane.data[:, base_x : base_x + STRIP_BYTES]
        buf[:, : cols.shape[1]] = cols
        return cls(base_x, buf)


@dataclass(frozen=True, eq=False)
class DualConvResult:
    pass_: Pass
    columns: np.ndarray = field(repr=False)  # int16, shape (2, rows - 2)

    def __eq__(self, other):
        if not isinstance(other, DualConvResult):
            return NotImplemented
        return self.pass_ is other.pass_ and np.array_equal(self.columns, other.columns)


def _strip_windows(strips: np.ndarray, offsets: Sequence[int]) -> np.ndarray:
    """Gather the 3x3 windows a pass reads from its strip.

    strips: (..., rows, 8) -> (..., 9, len(offsets), rows - 2), taps row-major.
    """
    out_rows = strips.shape[-2] - 2
    taps = [
        np.stack([strips[..., dy : dy + out_rows, off + dx] for off in offsets], axis=-2)
        for dy in range(3)
        for dx in range(3)
    ]
    return np.stack(taps, axis=-3)


def _signed(masks: np.ndarray) -> np.ndarray:
    """bool (..., 3, 3) -> float32 (..., 9) of +1/-1 weights."""
    masks = np.asarray(masks, dtype=bool)
    return np.where(masks, 1.0, -1.0).astype(np.float32).reshape(masks.shape[:-2] + (9,))


def _dual_conv(strips: np.ndarray, masks: np.ndarray, offsets: tuple[int, int]) -> np.ndarray:
    """Core of the dual-convolution instruction.

    strips: (..., rows, 8) activations; masks: bool (..., 3, 3), broadcast
    against the strip's leading axes. Returns int16 (..., 2, rows - 2).

    The nine conditional negations are reduced as a +/-1 dot product in
    float32, which is exact here: |sum| <= 9 * 255 < 2**24.
    """
    windows = _strip_windows(strips.astype(np.float32), offsets)
    sums = np.einsum("...t,...tkr->...kr", _signed(masks), windows)
    return sums.astype(np.int16)


def dual_conv_pass(strip: ColumnStrip, kernel: PackedKernel3x3, pass_: Pass) -> DualConvResult:
    if strip.rows < 3:
        raise ValueError(f"a 3x3 pass needs at least 3 rows, strip has {strip.rows}")
    cols = _dual_conv(strip.data.astype(np.int16), kernel.mask(), pass_.offsets)
    cols.setflags(write=False)
    return DualConvResult(pass_, cols)


def _strips(x: np.ndarray) -> np.ndarray:
    """(..., H, W) -> (..., n_strips, H, 8) covering all W-2 valid outputs."""
    height, width = x.shape[-2:]
    n_strips = -(-(width - 2) // STRIP_ADVANCE)
    need = STRIP_ADVANCE * n_strips + STRIP_BYTES - STRIP_ADVANCE
    pad = [(0, 0)] * (x.ndim - 1) + [(0, max(0, need - width))]
    x = np.pad(x, pad)[..., :need]
    win = sliding_window_view(x, STRIP_BYTES, axis=-1)[..., ::STRIP_ADVANCE, :]
    return np.moveaxis(win, -2, -3)


def _tiled(columns: np.ndarray, width: int) -> np.ndarray:
    """(..., n_strips, 4, R) pass outputs -> (..., R, width - 2) output plane."""
    out = np.moveaxis(columns, -1, -3)
    out = out.reshape(out.shape[:-2] + (-1,))
    return np.ascontiguousarray(out[..., : width - 2])


def _pass_offsets() -> tuple[int, ...]:
    return Pass.FIRST.offsets + Pass.SECOND.offsets


def conv_valid(x, masks) -> np.ndarray:
    """Strip-tiled valid 3x3 correlation.

    x: uint8 (..., H, W); masks: bool (..., 3, 3) broadcastable over the
    leading axes. Returns int16 (..., H-2, W-2).
    """
    x = np.asarray(x)
    height, width = x.shape[-2:]
    if height < 3 or width < 3:
        raise ValueError(f"plane {width}x{height} is too small for a 3x3 window")
    strips = _strips(x)
    masks = np.asarray(masks)[..., None, :, :]
    first = _dual_conv(strips, masks, Pass.FIRST.offsets)
    second = _dual_conv(strips, masks, Pass.SECOND.offsets)
    return _tiled(np.concatenate([first, second], axis=-2), width)


def conv_plane(plane: Plane, kernel: PackedKernel3x3) -> Accum16Plane:
    """Valid 3x3 convolution of a pre-padded plane, (W-2) x (H-2) outputs."""
    if plane.width % STRIP_ADVANCE:
        raise ValueError(f"plane width {plane.width} is not a multiple of {STRIP_ADVANCE}")
    if plane.height < 3:
        raise ValueError(f"plane height {plane.height} is below the 3-row window")
    return Accum16Plane.from_array(conv_valid(plane.data, kernel.mask()))


def conv_layer(x: np.ndarray, kernel_words: np.ndarray) -> np.ndarray:
    """Per-input-map partial sums for a whole layer.

    x: uint8 (C_in, H, W), already padded; kernel_words: uint16 (C_out, C_in).
    Returns int16 (C_out, C_in, H-2, W-2). Same strip/pass data path as
    conv_valid, with the +/-1 reduction batched per input map so each map's
    windows are gathered once and reused by every output map.
    """
    c_in, height, width = x.shape
    c_out = kernel_words.shape[0]
    strips = _strips(x)  # (C_in, S, H, 8)
    windows = _strip_windows(strips.astype(np.float32), _pass_offsets())  # (C_in, S, 9, 4, R)
    n_strips, rows = windows.shape[1], windows.shape[-1]
    flat = np.moveaxis(windows, 2, 1).reshape(c_in, 9, -1)  # (C_in, 9, S*4*R)
    signs = np.moveaxis(_signed(kernel_masks(kernel_words)), 0, 1)  # (C_in, C_out, 9)
    sums = np.matmul(signs, flat).astype(np.int16)  # (C_in, C_out, S*4*R)
    sums = np.moveaxis(sums.reshape(c_in, c_out, n_strips, 4, rows), 0, 1)
    return _tiled(sums, width)


def quad_add_array(acc: np.ndarray, partial: np.ndarray) -> np.ndarray:
    return np.add(acc.astype(np.int32), partial.astype(np.int32), dtype=np.int32)


def quad_add_16_to_32(acc: Accum32Plane, partial: Accum16Plane) -> Accum32Plane:
    if acc.shape != partial.shape:
        raise ValueError(f"shape mismatch: accumulator {acc.shape} vs partial {partial.shape}")
    return Accum32Plane.from_array(quad_add_array(acc.data, partial.data))


def accumulate_array(
    partials: np.ndarray,
    group_size: int = DEFAULT_GROUP,
    axis: int = 0,
    overflow: OverflowLog | None = None,
    where: str = "accumulate",
) -> np.ndarray:
    """Sum int16 partials along ``axis``: 16b within groups, 32b across them."""
    if group_size < 1:
        raise ValueError("group_size must be at least 1")
    partials = np.moveaxis(np.asarray(partials, dtype=np.int16), axis, 0)
    if partials.shape[0] == 0:
        raise ValueError("nothing to accumulate")
    total = np.zeros(partials.shape[1:], dtype=np.int32)
    for start in range(0, partials.shape[0], group_size):
        group = partials[start : start + group_size]
        group_sum = group.sum(axis=0, dtype=np.int16)
        if overflow is not None:
            prefix = np.cumsum(group, axis=0, dtype=np.int32)
            hit = ((prefix < INT16_MIN) | (prefix > INT16_MAX)).any(axis=0)
            overflow.record(f"{where}[group {start // group_size}]", int(hit.sum()))
        total = quad_add_array(total, group_sum)
    return total


def accumulate_maps(
    partials: Sequence[Accum16Plane],
    group_size: int = DEFAULT_GROUP,
    overflow: OverflowLog | None = None,
) -> Accum32Plane:
    if not partials:
        raise ValueError("nothing to accumulate")
    shape = partials[0].shape
    for i, p in enumerate(partials):
        if p.shape != shape:
            raise ValueError(f"partial {i} has shape {p.shape}, expected {shape}")
    stack = np.stack([p.data for p in partials])
    return Accum32Plane.from_array(accumulate_array(stack, group_size, overflow=overflow))


def _check_shifts(shifts) -> np.ndarray:
    shifts = np.asarray(shifts, dtype=np.int64)
    if shifts.size and (shifts.min() < 0 or shifts.max() > MAX_SHIFT):
        raise ValueError(f"shift must be within [0, {MAX_SHIFT}]")
    return shifts


def activate_array(acc: np.ndarray, biases, shifts) -> np.ndarray:
    """acc int32 (C, ...) with per-channel bias/shift -> uint8 (C, ...).

    The bias add is done wide; the result saturates to [0, 255] anyway.
    """
    acc = np.asarray(acc, dtype=np.int64)
    shifts = _check_shifts(shifts)
    extra = (1,) * (acc.ndim - 1)
    biases = np.asarray(biases, dtype=np.int64).reshape((-1,) + extra)
    y = (acc + biases) >> shifts.reshape((-1,) + extra)
    return np.clip(y, 0, 255).astype(np.uint8)


def activate_32_to_8(acc: Accum32Plane, bias: int, shift: int) -> Plane:
    return Plane.from_array(activate_array(acc.data[None], [bias], [shift])[0])


def maxpool_array(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"2x2 max-pool needs even dimensions, got {w}x{h}")
    return x.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2)).max(axis=(-3, -1))


def maxpool2(plane: Plane) -> Plane:
    return Plane.from_array(maxpool_array(plane.data))


def _rows_array(rows: Sequence[PackedDenseRow], length: int) -> np.ndarray:
    for j, row in enumerate(rows):
        if row.length != length:
            raise ValueError(f"row {j} has length {row.length}, input has {length}")
    return np.stack([np.frombuffer(r.bits, dtype=np.uint8) for r in rows])


def dense_sums(x: np.ndarray, packed_rows: np.ndarray, length: int) -> np.ndarray:
    """32b sums of conditionally negated inputs; packed_rows uint8 (N, ceil(L/8))."""
    x = np.asarray(x).reshape(-1)
    if x.size != length:
        raise ValueError(f"input length {x.size} does not match row length {length}")
    signed = x.astype(np.int32)
    terms = np.where(unpack_row_bits(packed_rows, length), signed, -signed)
    return terms.sum(axis=-1, dtype=np.int32)


def dense(x, rows: Sequence[PackedDenseRow], biases, shifts) -> Plane:
    x = np.asarray(x.data if isinstance(x, Plane) else x, dtype=np.uint8).reshape(-1)
    sums = dense_sums(x, _rows_array(rows, x.size), x.size)
    return Plane.from_array(activate_array(sums, biases, shifts)[None, :])


def svm_array(x: np.ndarray, packed_rows: np.ndarray, length: int, biases) -> np.ndarray:
    sums = dense_sums(x, packed_rows, length)
    return wrap32(sums.astype(np.int64) + np.asarray(biases, dtype=np.int64))


def svm_scores(x, rows: Sequence[PackedDenseRow], biases) -> np.ndarray:
    """Raw 32b linear scores; a more positive score is a better match."""
    x = np.asarray(x.data if isinstance(x, Plane) else x, dtype=np.uint8).reshape(-1)
    if len(biases) != len(rows):
        raise ValueError(f"{len(rows)} rows but {len(biases)} biases")
    return svm_array(x, _rows_array(rows, x.size), x.size, biases)


def argmax_label(scores) -> int:
    """Index of the highest score; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores)))
