"""Copyright messages as B-nary digit sequences, plus the bit-accuracy metric.

A payload is read as a big-endian bit string (most significant bit of each
byte first), chopped into log2(B)-bit groups (most significant group first),
and padded with the digit 0 up to the grid capacity.  Digit 0 maps to the
all-zero patch, so padded regions look unwatermarked by construction.
"""

from dataclasses import dataclass, field

import numpy as np


class CapacityError(ValueError):
    """Payload does not fit the grid."""


@dataclass(frozen=True)
class GridSpec:
    """Block geometry: (image_height, image_width) split into (block_height,
    block_width) tiles over `channels` channels."""

    image_height: int
    image_width: int
    block_height: int
    block_width: int
    channels: int = 3

    def __post_init__(self):
        if self.image_height % self.block_height:
            raise ValueError(
                f"block height {self.block_height} does not divide image height {self.image_height}"
            )
        if self.image_width % self.block_width:
            raise ValueError(
                f"block width {self.block_width} does not divide image width {self.image_width}"
            )

    @property
    def rows(self):
        return self.image_height // self.block_height

    @property
    def cols(self):
        return self.image_width // self.block_width

    @property
    def capacity(self):
        """Number of digit slots m."""
        return self.rows * self.cols

    @property
    def block_shape(self):
        return (self.block_height, self.block_width, self.channels)

    @property
    def image_shape(self):
        return (self.image_height, self.image_width, self.channels)


@dataclass
class MessageDigits:
    digits: np.ndarray  # integers in [0, base)
    base: int
    declared_bit_length: int = 0

    def __post_init__(self):
        self.digits = np.asarray(self.digits, dtype=np.int64)
        _check_base(self.base)
        if self.digits.size and (self.digits.min() < 0 or self.digits.max() >= self.base):
            raise ValueError(f"digits out of range for base {self.base}")
        if self.declared_bit_length < 0:
            raise ValueError("declared_bit_length must be non-negative")

    def __len__(self):
        return int(self.digits.size)


def _check_base(base):
    if base < 2 or base & (base - 1):
        raise ValueError(f"base must be a power of two >= 2, got {base}")
    return int(base).bit_length() - 1  # bits per digit


def _payload_bits(payload: bytes) -> np.ndarray:
    if len(payload) == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8))


def encode_message(payload: bytes, base: int, grid: GridSpec) -> MessageDigits:
    """Bytes -> B-nary digits laid onto the grid, zero-padded to capacity."""
    k = _check_base(base)
    bits = _payload_bits(payload)
    needed = -(-bits.size // k)  # digits required before padding
    if needed > grid.capacity:
        raise CapacityError(
            f"payload needs {needed} digits but grid holds {grid.capacity}"
        )
    padded = np.zeros(grid.capacity * k, dtype=np.uint8)
    padded[: bits.size] = bits
    groups = padded.reshape(grid.capacity, k)
    weights = 1 << np.arange(k - 1, -1, -1)
    digits = groups @ weights
    return MessageDigits(digits, base, declared_bit_length=bits.size)


def digits_to_bits(msg: MessageDigits) -> np.ndarray:
    """Expand digits to their binary form, most significant bit first."""
    k = _check_base(msg.base)
    shifts = np.arange(k - 1, -1, -1)
    return ((msg.digits[:, None] >> shifts) & 1).reshape(-1).astype(np.uint8)


def decode_message(msg: MessageDigits) -> bytes:
    """Exact inverse of encode_message for the declared payload length."""
    bits = digits_to_bits(msg)
    if msg.declared_bit_length > bits.size:
        raise ValueError(
            f"declared_bit_length {msg.declared_bit_length} exceeds available"
            f" {bits.size} bits"
        )
    if msg.declared_bit_length % 8:
        raise ValueError("declared_bit_length must be a whole number of bytes")
    return np.packbits(bits[: msg.declared_bit_length]).tobytes()


def bit_accuracy(truth: MessageDigits, decoded: MessageDigits) -> float:
    """Matching-bit fraction over the full m*log2(B) bits."""
    if truth.base != decoded.base:
        raise ValueError(f"base mismatch: {truth.base} vs {decoded.base}")
    if len(truth) != len(decoded):
        raise ValueError(f"length mismatch: {len(truth)} vs {len(decoded)}")
    tb = digits_to_bits(truth)
    db = digits_to_bits(decoded)
    return float((tb == db).mean())


def capacity_bits(grid: GridSpec, base: int) -> int:
    """m * log2(B) bits for a full grid."""
    return grid.capacity * _check_base(base)
