"""Network topology, compact layer notation, shape inference and MAC counting.

Notation: dash-separated tokens.

    NC3 | (RxNC3)   3x3 ReLU convolution with N output maps, repeated R times
    MP2             2x2 max-pool
    NFC | (RxNFC)   fully connected layer with N outputs
    NSVM            linear (L2-SVM) output layer, must be last

``×`` is accepted in place of ``x``. Rendering always uses ``x``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field, replace

DEFAULT_INPUT_SHAPE = (3, 32, 32)


class LayerKind(enum.Enum):
    CONV3 = "C3"
    MAXPOOL2 = "MP2"
    DENSE = "FC"
    SVM = "SVM"

    @property
    def has_weights(self) -> bool:
        return self is not LayerKind.MAXPOOL2


class NotationError(ValueError):
    """Malformed network notation; ``position`` is a 0-based character offset."""

    def __init__(self, message: str, notation: str, position: int):
        self.notation = notation
        self.position = position
        self.reason = message
        super().__init__(f"{message} at position {position}\n  {notation}\n  {' ' * position}^")


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    units: int = 0  # output maps (conv) or outputs (dense, SVM); 0 for pooling
    repeat: int = 1

    def __post_init__(self):
        if self.repeat < 1:
            raise ValueError("repeat must be at least 1")
        if self.kind is LayerKind.MAXPOOL2:
            if self.units not in (0,):
                raise ValueError("max-pool layers have no unit count")
        elif self.units < 1:
            raise ValueError(f"{self.kind.value} layer needs at least one output")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int] = DEFAULT_INPUT_SHAPE

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        seen_dense = False
        for i, layer in enumerate(self.layers):
            if layer.kind is LayerKind.SVM and i != len(self.layers) - 1:
                raise ValueError("SVM may only be the final layer")
            if layer.kind in (LayerKind.SVM, LayerKind.MAXPOOL2) and layer.repeat != 1:
                raise ValueError(f"{layer.kind.value} cannot be repeated")
            if seen_dense and layer.kind in (LayerKind.CONV3, LayerKind.MAXPOOL2):
                raise ValueError("spatial layers cannot follow a dense layer")
            seen_dense |= layer.kind in (LayerKind.DENSE, LayerKind.SVM)

    def expanded(self) -> list[LayerSpec]:
        """One entry per executed layer instance (repeat groups unrolled)."""
        return [replace(layer, repeat=1) for layer in self.layers for _ in range(layer.repeat)]

    @property
    def ends_with_svm(self) -> bool:
        return bool(self.layers) and self.layers[-1].kind is LayerKind.SVM


ORIGINAL_NOTATION = "(2x128C3)-MP2-(2x256C3)-MP2-(2x512C3)-MP2-(2x1024FC)-10SVM"
REDUCED_NOTATION = "(2x48C3)-MP2-(2x96C3)-MP2-(2x128C3)-MP2-(2x256FC)-10SVM"

_GROUPED = re.compile(r"\((\d+)[x×](\d+)(C3|FC)\)")
_PLAIN = re.compile(r"(\d+)(C3|FC|SVM)")
_KIND = {"C3": LayerKind.CONV3, "FC": LayerKind.DENSE, "SVM": LayerKind.SVM}


def _count(text: str, what: str, notation: str, pos: int) -> int:
    if len(text) > 1 and text[0] == "0":
        raise NotationError(f"malformed {what} {text!r} (leading zero)", notation, pos)
    value = int(text)
    if value == 0:
        raise NotationError(f"{what} must be at least 1", notation, pos)
    return value


def _parse_token(token: str, notation: str, pos: int) -> LayerSpec:
    if token == "MP2":
        return LayerSpec(LayerKind.MAXPOOL2)
    m = _GROUPED.fullmatch(token)
    if m:
        repeat = _count(m.group(1), "repeat", notation, pos + m.start(1))
        units = _count(m.group(2), "layer width", notation, pos + m.start(2))
        return LayerSpec(_KIND[m.group(3)], units, repeat)
    m = _PLAIN.fullmatch(token)
    if m:
        units = _count(m.group(1), "layer width", notation, pos + m.start(1))
        return LayerSpec(_KIND[m.group(2)], units)
    for kind in ("SVM", "MP2"):
        if token.startswith("(") and token.endswith(kind + ")"):
            raise NotationError(f"{kind} cannot be repeated", notation, pos)
    if not token:
        raise NotationError("empty layer token", notation, pos)
    raise NotationError(f"unknown layer token {token!r}", notation, pos)


def parse_network(notation: str, input_shape: tuple[int, int, int] = DEFAULT_INPUT_SHAPE) -> NetworkSpec:
    if not notation.strip():
        raise NotationError("empty network notation", notation, 0)
    layers: list[LayerSpec] = []
    token_starts: list[int] = []
    pos = 0
    for token in notation.split("-"):
        layers.append(_parse_token(token, notation, pos))
        token_starts.append(pos)
        pos += len(token) + 1
    seen_dense = False
    for i, layer in enumerate(layers):
        if layer.kind is LayerKind.SVM and i != len(layers) - 1:
            raise NotationError("SVM must be the last layer", notation, token_starts[i])
        if seen_dense and layer.kind in (LayerKind.CONV3, LayerKind.MAXPOOL2):
            raise NotationError(
                f"{layer.kind.value} layer after a dense layer", notation, token_starts[i]
            )
        seen_dense |= layer.kind is LayerKind.DENSE
    return NetworkSpec(tuple(layers), input_shape)


def render_network(spec: NetworkSpec) -> str:
    parts = []
    for layer in spec.layers:
        if layer.kind is LayerKind.MAXPOOL2:
            parts.append("MP2")
        elif layer.repeat > 1:
            parts.append(f"({layer.repeat}x{layer.units}{layer.kind.value})")
        else:
            parts.append(f"{layer.units}{layer.kind.value}")
    return "-".join(parts)


def builtin_network(name: str) -> NetworkSpec:
    try:
        notation = {"original": ORIGINAL_NOTATION, "reduced": REDUCED_NOTATION}[name]
    except KeyError:
        raise ValueError(f"unknown built-in network {name!r}; choose 'original' or 'reduced'") from None
    return parse_network(notation)


class ShapeError(ValueError):
    pass


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, int, int]]:
    """Output (channels, height, width) of each expanded layer.

    Convolutions use same padding; dense and SVM outputs are (units, 1, 1).
    """
    c, h, w = spec.input_shape
    if min(c, h, w) < 1:
        raise ShapeError(f"input shape {spec.input_shape} has a non-positive dimension")
    shapes = []
    for i, layer in enumerate(spec.expanded()):
        if layer.kind is LayerKind.CONV3:
            c = layer.units
        elif layer.kind is LayerKind.MAXPOOL2:
            if h % 2 or w % 2:
                raise ShapeError(f"layer {i + 1}: max-pool over odd dimensions {h}x{w}")
            h, w = h // 2, w // 2
        else:
            c, h, w = layer.units, 1, 1
        shapes.append((c, h, w))
    return shapes


def layer_inputs(spec: NetworkSpec) -> list[tuple[int, int, int]]:
    """Input shape of each expanded layer."""
    return [spec.input_shape] + infer_shapes(spec)[:-1]


def pre_dense_shape(spec: NetworkSpec) -> tuple[int, int, int]:
    """Shape entering the first dense or SVM layer (before flattening)."""
    for layer, shape in zip(spec.expanded(), layer_inputs(spec)):
        if layer.kind in (LayerKind.DENSE, LayerKind.SVM):
            return shape
    raise ShapeError("network has no dense or SVM layer")


def fan_in(layer: LayerSpec, in_shape: tuple[int, int, int]) -> int:
    c, h, w = in_shape
    if layer.kind is LayerKind.CONV3:
        return 9 * c
    if layer.kind is LayerKind.MAXPOOL2:
        return 0
    return c * h * w


def layer_macs(layer: LayerSpec, in_shape: tuple[int, int, int]) -> int:
    c, h, w = in_shape
    if layer.kind is LayerKind.CONV3:
        return h * w * c * layer.units * 9
    if layer.kind is LayerKind.MAXPOOL2:
        return 0
    return c * h * w * layer.units


def sign_bits(layer: LayerSpec, in_shape: tuple[int, int, int]) -> int:
    """Number of binary weights the layer carries."""
    if layer.kind is LayerKind.MAXPOOL2:
        return 0
    return fan_in(layer, in_shape) * layer.units


@dataclass(frozen=True)
class OpCount:
    labels: tuple[str, ...]
    per_layer: tuple[int, ...]
    total: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", sum(self.per_layer))


def layer_label(layer: LayerSpec) -> str:
    return "MP2" if layer.kind is LayerKind.MAXPOOL2 else f"{layer.units}{layer.kind.value}"


def count_ops(spec: NetworkSpec) -> OpCount:
    """Multiply-accumulates per expanded layer; pooling counts zero."""
    expanded = spec.expanded()
    ins = layer_inputs(spec)
    return OpCount(
        tuple(layer_label(l) for l in expanded),
        tuple(layer_macs(l, s) for l, s in zip(expanded, ins)),
    )


def total_sign_bits(spec: NetworkSpec) -> int:
    return sum(sign_bits(l, s) for l, s in zip(spec.expanded(), layer_inputs(spec)))


def reduction(baseline: OpCount, candidate: OpCount) -> float:
    """Fraction of the baseline's MACs that the candidate avoids."""
    return 1.0 - candidate.total / baseline.total
