"""Fixed-point value types and bit conventions shared by the whole engine.

Binary weights are stored as sign bits: bit 1 means +1, bit 0 means -1.
3x3 kernels pack row-major into the low 9 bits of a 16b word
(bit 0 = (dy=0, dx=0), bit 8 = (dy=2, dx=2)). Dense rows pack LSB-first
within each byte, zero-padded to a byte boundary.

16b and 32b sums wrap in two's complement like the hardware adders do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

KERNEL_TAPS = 9
KERNEL_MASK = 0x01FF

INT16_MIN, INT16_MAX = -(1 << 15), (1 << 15) - 1
INT32_MIN, INT32_MAX = -(1 << 31), (1 << 31) - 1


def wrap16(x):
    """Two's-complement wrap of an int or integer array into 16b signed."""
    if isinstance(x, (int, np.integer)):
        return ((int(x) + (1 << 15)) & 0xFFFF) - (1 << 15)
    return np.asarray(x).astype(np.int64).astype(np.int16)


def wrap32(x):
    """Two's-complement wrap of an int or integer array into 32b signed."""
    if isinstance(x, (int, np.integer)):
        return ((int(x) + (1 << 31)) & 0xFFFFFFFF) - (1 << 31)
    return np.asarray(x).astype(np.int64).astype(np.int32)


def conditional_negate(activation: int, sign_bit: int) -> int:
    """Multiply an 8b activation by a binary weight without a multiplier."""
    if not 0 <= activation <= 255:
        raise ValueError(f"activation {activation} outside [0, 255]")
    if sign_bit not in (0, 1):
        raise ValueError(f"sign bit must be 0 or 1, got {sign_bit}")
    return activation if sign_bit else -activation


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _coerce_data(width: int, height: int, data, dtype, lo: int, hi: int, what: str) -> np.ndarray:
    if width < 1 or height < 1:
        raise ValueError(f"{what}: dimensions must be positive, got {width}x{height}")
    raw = np.asarray(data)
    if raw.size != width * height:
        raise ValueError(
            f"{what}: data length {raw.size} does not match {width}x{height}={width * height}"
        )
    if raw.ndim == 2 and raw.shape != (height, width):
        raise ValueError(f"{what}: data shape {raw.shape} does not match (height, width)=({height}, {width})")
    if raw.size and (raw.min() < lo or raw.max() > hi):
        raise ValueError(f"{what}: values outside [{lo}, {hi}]")
    return _frozen(raw.reshape(height, width).astype(dtype))


class _PlaneBase:
    width: int
    height: int
    data: np.ndarray

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.data, other.data
        )

    def __hash__(self):
        return hash((type(self).__name__, self.width, self.height, self.data.tobytes()))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class Plane(_PlaneBase):
    """A map of 8b unsigned activations, stored as a read-only (height, width) array."""

    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "data", _coerce_data(self.width, self.height, self.data, np.uint8, 0, 255, "Plane")
        )

    @classmethod
    def from_array(cls, arr) -> "Plane":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"Plane needs a 2-D array, got shape {arr.shape}")
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> "Plane":
        return cls(width, height, np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class Accum16Plane(_PlaneBase):
    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "data",
            _coerce_data(self.width, self.height, self.data, np.int16, INT16_MIN, INT16_MAX, "Accum16Plane"),
        )

    @classmethod
    def from_array(cls, arr) -> "Accum16Plane":
        arr = np.asarray(arr)
        return cls(arr.shape[1], arr.shape[0], arr)


@dataclass(frozen=True, eq=False)
class Accum32Plane(_PlaneBase):
    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(
            self,
            "data",
            _coerce_data(self.width, self.height, self.data, np.int32, INT32_MIN, INT32_MAX, "Accum32Plane"),
        )

    @classmethod
    def from_array(cls, arr) -> "Accum32Plane":
        arr = np.asarray(arr)
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> "Accum32Plane":
        return cls(width, height, np.zeros((height, width), dtype=np.int32))


@dataclass(frozen=True)
class PackedKernel3x3:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"kernel word {self.bits:#x} does not fit 16 bits")
        if self.bits & ~KERNEL_MASK:
            raise ValueError(f"kernel word {self.bits:#06x} has bits set above bit 8")

    def sign_bit(self, dy: int, dx: int) -> int:
        return (self.bits >> (3 * dy + dx)) & 1

    def mask(self) -> np.ndarray:
        """(3, 3) bool array, True where the weight is +1."""
        return kernel_masks(np.array(self.bits, dtype=np.uint16))


def pack_kernel(signs: Sequence[int]) -> PackedKernel3x3:
    signs = list(signs)
    if len(signs) != KERNEL_TAPS:
        raise ValueError(f"a 3x3 kernel needs 9 signs, got {len(signs)}")
    bits = 0
    for i, s in enumerate(signs):
        if s not in (-1, 1):
            raise ValueError(f"kernel entry {i} is {s!r}, expected -1 or +1")
        if s == 1:
            bits |= 1 << i
    return PackedKernel3x3(bits)


def unpack_kernel(kernel: PackedKernel3x3) -> tuple[int, ...]:
    return tuple(1 if (kernel.bits >> i) & 1 else -1 for i in range(KERNEL_TAPS))


def kernel_masks(words) -> np.ndarray:
    """Expand packed kernel words of any shape S into a bool array S + (3, 3)."""
    words = np.asarray(words, dtype=np.uint16)
    shifts = np.arange(KERNEL_TAPS, dtype=np.uint16)
    bits = (words[..., None] >> shifts) & 1
    return bits.astype(bool).reshape(words.shape + (3, 3))


def pack_kernel_masks(masks) -> np.ndarray:
    """Inverse of kernel_masks: bool S + (3, 3) -> uint16 words of shape S."""
    masks = np.asarray(masks, dtype=bool)
    flat = masks.reshape(masks.shape[:-2] + (KERNEL_TAPS,)).astype(np.uint16)
    return (flat << np.arange(KERNEL_TAPS, dtype=np.uint16)).sum(axis=-1, dtype=np.uint16)


@dataclass(frozen=True)
class PackedDenseRow:
    """Sign bits for one output of a dense or SVM layer."""

    length: int
    bits: bytes

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("dense row length must be positive")
        nbytes = (self.length + 7) // 8
        if len(self.bits) != nbytes:
            raise ValueError(f"row of {self.length} signs needs {nbytes} bytes, got {len(self.bits)}")
        pad = nbytes * 8 - self.length
        if pad and self.bits[-1] >> (8 - pad):
            raise ValueError("pad bits beyond the row length must be zero")

    def mask(self) -> np.ndarray:
        return unpack_row_bits(np.frombuffer(self.bits, dtype=np.uint8), self.length)


def pack_dense_row(signs: Iterable[int]) -> PackedDenseRow:
    signs = np.asarray(list(signs))
    if signs.size == 0:
        raise ValueError("cannot pack an empty row")
    bad = ~np.isin(signs, (-1, 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"row entry {i} is {signs[i]!r}, expected -1 or +1")
    return PackedDenseRow(signs.size, np.packbits(signs == 1, bitorder="little").tobytes())


def unpack_dense_row(row: PackedDenseRow) -> tuple[int, ...]:
    return tuple(int(v) for v in np.where(row.mask(), 1, -1))


def unpack_row_bits(packed, length: int) -> np.ndarray:
    """uint8 (..., ceil(length/8)) -> bool (..., length), LSB-first."""
    return np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, count=length, bitorder="little").astype(bool)


def pack_row_bits(mask) -> np.ndarray:
    return np.packbits(np.asarray(mask, dtype=bool), axis=-1, bitorder="little")


class OverflowLog:
    """Collector for debug-mode overflow events; never alters results."""

    def __init__(self):
        self.events: list[tuple[str, int]] = []

    def record(self, where: str, count: int) -> None:
        if count:
            self.events.append((where, int(count)))

    @property
    def total(self) -> int:
        return sum(n for _, n in self.events)

    def __len__(self):
        return len(self.events)
