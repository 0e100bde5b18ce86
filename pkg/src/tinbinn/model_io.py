"""Packed-weight model files, random models, image loading and camera preprocessing.

Model file layout (little-endian throughout)::

    magic      4 bytes   b"TBNN"
    version    u16       1
    notation   u16 length + UTF-8 bytes (canonical notation)
    records    one per weighted layer instance, in network order:
                 conv:      C_out x C_in u16 kernel words (output-major)
                 dense/SVM: N rows of ceil(fan_in / 8) bytes
                 N x i32 biases, then N x u8 shifts
    crc32      u32 over every preceding byte

The input shape is fixed at 3x32x32 (same-padded convolutions).
"""

from __future__ import annotations

import io
import math
import re
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .fxcore import KERNEL_MASK, Plane
from .kernels import MAX_SHIFT
from .netgraph import (
    LayerKind,
    LayerSpec,
    NetworkSpec,
    NotationError,
    ShapeError,
    fan_in,
    infer_shapes,
    layer_inputs,
    parse_network,
    render_network,
    total_sign_bits,
)

MAGIC = b"TBNN"
FORMAT_VERSION = 1
BIAS_RANGE = 1024

# figure quoted for the flash-resident weight image of the 10-category system;
# the reduced topology's sign bits alone come to 124 610 bytes
QUOTED_WEIGHT_IMAGE_BYTES = 270_000


class ModelFormatError(ValueError):
    pass


class CorruptHeaderError(ModelFormatError):
    pass


class BadMagicError(ModelFormatError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class SizeMismatchError(ModelFormatError):
    pass


class ModelContentError(ModelFormatError):
    """Structurally sound file whose contents violate the model invariants."""


@dataclass(frozen=True, eq=False)
class LayerParams:
    """Weights and activation scaling of one weighted layer instance.

    ``weights`` is uint16 (C_out, C_in) kernel words for convolutions and
    uint8 (N, ceil(fan_in/8)) packed rows for dense/SVM layers.
    """

    kind: LayerKind
    fan_in: int
    weights: np.ndarray = field(repr=False)
    biases: np.ndarray = field(repr=False)
    shifts: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name, dtype in (("weights", self.weights.dtype), ("biases", np.int32), ("shifts", np.uint8)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def units(self) -> int:
        return self.biases.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LayerParams):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.fan_in == other.fan_in
            and self.weights.dtype == other.weights.dtype
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
            and np.array_equal(self.shifts, other.shifts)
        )


@dataclass(frozen=True, eq=False)
class Model:
    spec: NetworkSpec
    layers: tuple[LayerParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        validate_model(self)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return self.spec == other.spec and self.layers == other.layers

    @property
    def sign_bits(self) -> int:
        return total_sign_bits(self.spec)

    def weighted(self):
        """Yield (expanded layer index, LayerSpec, input shape, LayerParams or None)."""
        params = iter(self.layers)
        for i, (layer, shape) in enumerate(zip(self.spec.expanded(), layer_inputs(self.spec))):
            yield i, layer, shape, (next(params) if layer.kind.has_weights else None)


def _expected_weight_shape(kind: LayerKind, units: int, in_shape) -> tuple[tuple[int, ...], np.dtype]:
    if kind is LayerKind.CONV3:
        return (units, in_shape[0]), np.dtype(np.uint16)
    n = in_shape[0] * in_shape[1] * in_shape[2]
    return (units, (n + 7) // 8), np.dtype(np.uint8)


def validate_model(model: Model) -> None:
    spec = model.spec
    if not spec.ends_with_svm:
        raise ModelContentError("a model's network must end with an SVM layer")
    infer_shapes(spec)
    weighted = [(l, s) for l, s in zip(spec.expanded(), layer_inputs(spec)) if l.kind.has_weights]
    if len(weighted) != len(model.layers):
        raise ModelContentError(f"network has {len(weighted)} weighted layers, model carries {len(model.layers)}")
    for i, ((layer, in_shape), params) in enumerate(zip(weighted, model.layers)):
        where = f"weighted layer {i + 1} ({layer.units}{layer.kind.value})"
        if params.kind is not layer.kind:
            raise ModelContentError(f"{where}: parameters are for {params.kind.value}")
        shape, dtype = _expected_weight_shape(layer.kind, layer.units, in_shape)
        if params.weights.shape != shape or params.weights.dtype != dtype:
            raise ModelContentError(f"{where}: weights {params.weights.shape} {params.weights.dtype}, expected {shape} {dtype}")
        if params.fan_in != fan_in(layer, in_shape):
            raise ModelContentError(f"{where}: fan-in {params.fan_in}, expected {fan_in(layer, in_shape)}")
        if params.biases.shape != (layer.units,) or params.shifts.shape != (layer.units,):
            raise ModelContentError(f"{where}: need {layer.units} biases and shifts")
        if params.shifts.max() > MAX_SHIFT:
            raise ModelContentError(f"{where}: shift above {MAX_SHIFT}")
        if layer.kind is LayerKind.SVM and params.shifts.any():
            raise ModelContentError(f"{where}: SVM scores are unshifted, shifts must be 0")
        if layer.kind is LayerKind.CONV3:
            if (params.weights & ~np.uint16(KERNEL_MASK)).any():
                raise ModelContentError(f"{where}: kernel word with bits above bit 8")
        else:
            pad = params.weights.shape[1] * 8 - params.fan_in
            if pad and (params.weights[:, -1] >> (8 - pad)).any():
                raise ModelContentError(f"{where}: nonzero pad bits in a packed row")


def random_shift(layer: LayerSpec, in_shape) -> int:
    """Shift that keeps random-sign sums near the input's scale.

    A sum of n random-sign terms grows like sqrt(n), so dividing by
    2**ceil(log2(n) / 2) keeps activations from dying out or saturating
    as depth grows.
    """
    return min(MAX_SHIFT, math.ceil(math.log2(fan_in(layer, in_shape)) / 2))


def gen_random_model(spec: NetworkSpec, seed: int) -> Model:
    """Deterministic random model: uniform signs, biases in [-1024, 1024]."""
    rng = np.random.default_rng(seed)
    layers = []
    for _, layer, in_shape, _ in _weighted_slots(spec):
        shape, dtype = _expected_weight_shape(layer.kind, layer.units, in_shape)
        n_in = fan_in(layer, in_shape)
        if layer.kind is LayerKind.CONV3:
            weights = rng.integers(0, KERNEL_MASK + 1, size=shape, dtype=np.uint16)
        else:
            weights = rng.integers(0, 256, size=shape, dtype=np.uint8)
            pad = shape[1] * 8 - n_in
            if pad:
                weights[:, -1] &= np.uint8(0xFF >> pad)
        biases = rng.integers(-BIAS_RANGE, BIAS_RANGE + 1, size=layer.units, dtype=np.int32)
        shift = 0 if layer.kind is LayerKind.SVM else random_shift(layer, in_shape)
        shifts = np.full(layer.units, shift, dtype=np.uint8)
        layers.append(LayerParams(layer.kind, n_in, weights, biases, shifts))
    return Model(spec, tuple(layers))


def _weighted_slots(spec: NetworkSpec):
    for i, (layer, shape) in enumerate(zip(spec.expanded(), layer_inputs(spec))):
        if layer.kind.has_weights:
            yield i, layer, shape, None


def model_to_bytes(model: Model) -> bytes:
    notation = render_network(model.spec).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HH", FORMAT_VERSION, len(notation)))
    buf.write(notation)
    for params in model.layers:
        if params.kind is LayerKind.CONV3:
            buf.write(params.weights.astype("<u2").tobytes())
        else:
            buf.write(params.weights.tobytes())
        buf.write(params.biases.astype("<i4").tobytes())
        buf.write(params.shifts.tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def write_model(model: Model, sink: BinaryIO) -> int:
    data = model_to_bytes(model)
    sink.write(data)
    return len(data)


def model_from_bytes(data: bytes) -> Model:
    if len(data) < 12:
        raise CorruptHeaderError(f"model file too short for a header ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, name_len = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ChecksumError("checksum mismatch: model file is corrupt")
    body = data[:-4]
    pos = 8
    if pos + name_len > len(body):
        raise SizeMismatchError("notation runs past the end of the file")
    try:
        spec = parse_network(body[pos : pos + name_len].decode("utf-8"))
        infer_shapes(spec)
    except (UnicodeDecodeError, NotationError, ShapeError, ValueError) as exc:
        raise ModelContentError(f"bad network notation in model file: {exc}") from exc
    if not spec.ends_with_svm:
        raise ModelContentError("a model's network must end with an SVM layer")
    pos += name_len
    layers = []
    for _, layer, in_shape, _ in _weighted_slots(spec):
        shape, dtype = _expected_weight_shape(layer.kind, layer.units, in_shape)
        item = np.dtype("<u2") if dtype == np.uint16 else np.dtype(np.uint8)
        n_weights = shape[0] * shape[1]
        need = n_weights * item.itemsize + layer.units * 5
        if pos + need > len(body):
            raise SizeMismatchError(
                f"truncated payload: {layer.units}{layer.kind.value} record needs {need} bytes, {len(body) - pos} left"
            )
        weights = np.frombuffer(body, dtype=item, count=n_weights, offset=pos).reshape(shape).astype(dtype)
        pos += n_weights * item.itemsize
        biases = np.frombuffer(body, dtype="<i4", count=layer.units, offset=pos).astype(np.int32)
        pos += 4 * layer.units
        shifts = np.frombuffer(body, dtype=np.uint8, count=layer.units, offset=pos).copy()
        pos += layer.units
        layers.append(LayerParams(layer.kind, fan_in(layer, in_shape), weights, biases, shifts))
    if pos != len(body):
        raise SizeMismatchError(f"{len(body) - pos} unexpected bytes after the last layer record")
    try:
        return Model(spec, tuple(layers))
    except ModelContentError:
        raise
    except ValueError as exc:
        raise ModelContentError(str(exc)) from exc


def read_model(source) -> Model:
    """Read a model from a path or a binary file object."""
    if hasattr(source, "read"):
        return model_from_bytes(source.read())
    with open(source, "rb") as fh:
        return model_from_bytes(fh.read())


def save_model(model: Model, path) -> int:
    with open(path, "wb") as fh:
        return write_model(model, fh)


# -- images ---------------------------------------------------------------

FRAME_WIDTH, FRAME_HEIGHT = 40, 30
PADDED_HEIGHT = 34
CROP = 32
DIRECT_SIZE = 32


@dataclass(frozen=True, eq=False)
class RawFrame:
    """Downscaled camera frame: 40x30 RGBA bytes, row-major; alpha is ignored."""

    data: bytes = field(repr=False)
    width: int = FRAME_WIDTH
    height: int = FRAME_HEIGHT

    def __post_init__(self):
        if (self.width, self.height) != (FRAME_WIDTH, FRAME_HEIGHT):
            raise ValueError(f"camera frames are {FRAME_WIDTH}x{FRAME_HEIGHT}, got {self.width}x{self.height}")
        data = bytes(self.data)
        if len(data) != FRAME_WIDTH * FRAME_HEIGHT * 4:
            raise ValueError(f"RGBA frame needs {FRAME_WIDTH * FRAME_HEIGHT * 4} bytes, got {len(data)}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_rgb(cls, rgb) -> "RawFrame":
        rgb = np.asarray(rgb, dtype=np.uint8)
        if rgb.shape != (FRAME_HEIGHT, FRAME_WIDTH, 3):
            raise ValueError(f"expected a ({FRAME_HEIGHT}, {FRAME_WIDTH}, 3) RGB array, got {rgb.shape}")
        rgba = np.concatenate([rgb, np.full(rgb.shape[:2] + (1,), 255, np.uint8)], axis=-1)
        return cls(rgba.tobytes())

    def rgba(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(FRAME_HEIGHT, FRAME_WIDTH, 4)


@dataclass(frozen=True)
class CropWindow:
    """Where the 32x32 convolution region sits inside the 40x34 padded planes."""

    x0: int = (FRAME_WIDTH - CROP) // 2
    y0: int = (PADDED_HEIGHT - CROP) // 2
    size: int = CROP


PAD_TOP = (PADDED_HEIGHT - FRAME_HEIGHT) // 2


def preprocess(frame: RawFrame) -> tuple[list[Plane], CropWindow]:
    """De-interleave RGBA into three planes, padded with black rows to 40x34."""
    if not isinstance(frame, RawFrame):
        raise TypeError("preprocess expects a RawFrame")
    rgba = frame.rgba()
    planes = []
    for c in range(3):
        buf = np.zeros((PADDED_HEIGHT, FRAME_WIDTH), dtype=np.uint8)
        buf[PAD_TOP : PAD_TOP + FRAME_HEIGHT] = rgba[..., c]
        planes.append(Plane.from_array(buf))
    return planes, CropWindow()


def center_crop32(planes, window: CropWindow = CropWindow()) -> list[Plane]:
    """34x34 sub-planes: the centred 32x32 region plus a 1-pixel border."""
    planes = list(planes)
    if len(planes) != 3:
        raise ValueError(f"expected 3 planes, got {len(planes)}")
    out = []
    for p in planes:
        if (p.width, p.height) != (FRAME_WIDTH, PADDED_HEIGHT):
            raise ValueError(f"expected {FRAME_WIDTH}x{PADDED_HEIGHT} planes, got {p.width}x{p.height}")
        y, x = window.y0 - 1, window.x0 - 1
        out.append(Plane.from_array(p.data[y : y + window.size + 2, x : x + window.size + 2]))
    return out


class PPMError(ValueError):
    pass


_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_ppm(data: bytes) -> np.ndarray:
    """Binary P6 pixmap -> uint8 (height, width, 3)."""
    pos = 0
    fields = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise PPMError("malformed PPM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P6":
        raise PPMError(f"not a binary PPM (magic {fields[0][:8]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PPMError("malformed PPM header") from None
    if maxval != 255:
        raise PPMError(f"PPM maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise PPMError("malformed PPM header")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PPMError("malformed PPM header")
    pixels = data[pos + 1 :]
    need = width * height * 3
    if len(pixels) < need:
        raise PPMError(f"PPM pixel data truncated ({len(pixels)} of {need} bytes)")
    return np.frombuffer(pixels[:need], dtype=np.uint8).reshape(height, width, 3)


def encode_ppm(rgb) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


def load_image_ppm(source) -> RawFrame | list[Plane]:
    """40x30 images become a RawFrame (camera path); 32x32 become 3 planes."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    rgb = parse_ppm(data)
    h, w = rgb.shape[:2]
    if (w, h) == (FRAME_WIDTH, FRAME_HEIGHT):
        return RawFrame.from_rgb(rgb)
    if (w, h) == (DIRECT_SIZE, DIRECT_SIZE):
        return [Plane.from_array(rgb[..., c]) for c in range(3)]
    raise PPMError(f"image is {w}x{h}; expected {FRAME_WIDTH}x{FRAME_HEIGHT} (camera) or {DIRECT_SIZE}x{DIRECT_SIZE}")
