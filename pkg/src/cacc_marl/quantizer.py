"""Unbiased stochastic quantization of parameter vectors and its wire format.

Wire layout (little-endian)::

    header   r: float64 | n: uint16 | d: uint32 | mode: uint8        (120 bits)
    dense    d fields of ceil(log2(2n+1)) bits, two's complement level
    sparse   uint32 non-zero count, then per non-zero entry:
             ceil(log2 d)-bit index | 1 sign bit | ceil(log2 n)-bit (|level| - 1)

Bit fields are packed LSB-first and the body is zero-padded to a whole byte.
Resolution ``n = 0`` is the unquantized pass-through: each value travels as
its raw 64-bit float pattern (sparse entries carry index + 64 bits, no sign).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import EncodeOverflow, Malformed, NonFinite

_HEADER = struct.Struct("<dHIB")
HEADER_BITS = 8 * _HEADER.size
COUNT_BITS = 32
MODES = {"dense": 0, "sparse": 1}
_MODE_NAMES = {v: k for k, v in MODES.items()}
RAW_BITS = 64


@dataclass(frozen=True)
class QuantizedMessage:
    """Scale ``r`` plus integer levels in [-n, n]; component i decodes to ``r * level / n``.

    For ``n == 0`` ``levels`` holds the raw float64 values instead.
    """

    r: float
    levels: np.ndarray
    n: int

    @property
    def d(self) -> int:
        return len(self.levels)

    def __eq__(self, other):
        if not isinstance(other, QuantizedMessage):
            return NotImplemented
        return (self.n == other.n and self.levels.dtype.kind == other.levels.dtype.kind
                and np.array_equal(self.r, other.r)
                and np.array_equal(self.levels, other.levels))

    __hash__ = None


def quantize(x, n: int, rng: np.random.Generator) -> QuantizedMessage:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFinite("cannot quantize a vector with non-finite entries")
    if n < 0:
        raise ValueError(f"resolution must be >= 0, got {n}")
    mag = np.abs(x)
    r = float(np.max(mag)) if x.size else 0.0
    if n == 0:
        return QuantizedMessage(r, x.copy(), 0)
    if r == 0.0:
        return QuantizedMessage(0.0, np.zeros(x.shape, dtype=np.int64), n)
    # in-place form of  m = min(floor(n|x|/r), n-1);  level = sign(x) (m + [U < n|x|/r - m])
    mag *= n
    mag /= r
    m = np.floor(mag)
    np.minimum(m, n - 1, out=m)
    mag -= m
    m += rng.random(x.shape) < mag
    levels = m.astype(np.int64)
    np.negative(levels, out=levels, where=x < 0)
    return QuantizedMessage(r, levels, n)


def dequantize(q: QuantizedMessage) -> np.ndarray:
    if q.n == 0:
        return np.asarray(q.levels, dtype=float).copy()
    return q.r * q.levels / q.n


def dense_width(n: int) -> int:
    return RAW_BITS if n == 0 else (2 * n).bit_length()


def index_width(d: int) -> int:
    return max(d - 1, 0).bit_length()


def magnitude_width(n: int) -> int:
    return max(n - 1, 0).bit_length()


def sparse_entry_width(n: int, d: int) -> int:
    if n == 0:
        return index_width(d) + RAW_BITS
    return index_width(d) + 1 + magnitude_width(n)


def _nonzero(q: QuantizedMessage) -> np.ndarray:
    return np.flatnonzero(q.levels)


def message_bits(q: QuantizedMessage, mode: str = "dense") -> int:
    """Exact encoded length in bits, before padding the body to a byte."""
    if mode == "dense":
        return HEADER_BITS + q.d * dense_width(q.n)
    if mode == "sparse":
        return HEADER_BITS + COUNT_BITS + len(_nonzero(q)) * sparse_entry_width(q.n, q.d)
    raise ValueError(f"unknown mode {mode!r}")


def best_mode(q: QuantizedMessage) -> str:
    return "sparse" if message_bits(q, "sparse") < message_bits(q, "dense") else "dense"


def _to_bits(values: np.ndarray, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros((len(values), 0), dtype=np.uint8)
    shifts = np.arange(width, dtype=np.uint64)
    return ((values.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def _from_bits(bits: np.ndarray) -> np.ndarray:
    if bits.shape[1] == 0:
        return np.zeros(len(bits), dtype=np.uint64)
    weights = np.uint64(1) << np.arange(bits.shape[1], dtype=np.uint64)
    return (bits.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def _raw_pattern(values) -> np.ndarray:
    return np.ascontiguousarray(values, dtype="<f8").view("<u8")


def encode(q: QuantizedMessage, mode: str = "dense") -> bytes:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if q.d > 2**32 - 1:
        raise EncodeOverflow(f"dimension {q.d} does not fit in 32 bits")
    if not 0 <= q.n <= 2**16 - 1:
        raise EncodeOverflow(f"resolution {q.n} does not fit in 16 bits")
    header = _HEADER.pack(q.r, q.n, q.d, MODES[mode])
    if mode == "dense":
        if q.n == 0:
            bits = _to_bits(_raw_pattern(q.levels), RAW_BITS)
        else:
            w = dense_width(q.n)
            bits = _to_bits(q.levels.astype(np.int64) & ((1 << w) - 1), w)
        return header + np.packbits(bits.ravel(), bitorder="little").tobytes()
    idx = _nonzero(q)
    parts = [_to_bits(idx, index_width(q.d))]
    if q.n == 0:
        parts.append(_to_bits(_raw_pattern(q.levels[idx]), RAW_BITS))
    else:
        lv = q.levels[idx]
        parts.append(_to_bits((lv < 0).astype(np.uint64), 1))
        parts.append(_to_bits(np.abs(lv) - 1, magnitude_width(q.n)))
    bits = np.concatenate(parts, axis=1).ravel()
    return header + struct.pack("<I", len(idx)) + np.packbits(bits, bitorder="little").tobytes()


def _read_bits(body: bytes, nbits: int) -> np.ndarray:
    if len(body) != (nbits + 7) // 8:
        raise Malformed(f"body has {len(body)} bytes, expected {(nbits + 7) // 8}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), bitorder="little")
    if bits[nbits:].any():
        raise Malformed("non-zero padding bits")
    return bits[:nbits]


def decode(data: bytes, mode: str | None = None) -> QuantizedMessage:
    """Inverse of ``encode``. ``mode=None`` trusts the header's mode tag."""
    if len(data) < _HEADER.size:
        raise Malformed("truncated header")
    r, n, d, tag = _HEADER.unpack_from(data)
    if tag not in _MODE_NAMES:
        raise Malformed(f"unknown mode tag {tag}")
    if mode is not None and MODES.get(mode) != tag:
        raise Malformed(f"expected a {mode} message, header says {_MODE_NAMES[tag]}")
    if not (np.isfinite(r) and r >= 0):
        raise Malformed(f"invalid scale {r}")
    body = data[_HEADER.size:]
    if _MODE_NAMES[tag] == "dense":
        w = dense_width(n)
        raw = _from_bits(_read_bits(body, d * w).reshape(d, w))
        if n == 0:
            return _raw_message(r, raw.astype("<u8").view("<f8").astype(float))
        levels = raw.astype(np.int64)
        levels = np.where(levels >= 1 << (w - 1), levels - (1 << w), levels)
    else:
        if len(body) < 4:
            raise Malformed("truncated non-zero count")
        (count,) = struct.unpack_from("<I", body)
        if count > d:
            raise Malformed(f"{count} non-zeros in a vector of dimension {d}")
        wi, wm = index_width(d), magnitude_width(n)
        width = sparse_entry_width(n, d)
        bits = _read_bits(body[4:], count * width).reshape(count, width)
        idx = _from_bits(bits[:, :wi]).astype(np.int64)
        if np.any(idx >= d) or np.any(np.diff(idx) <= 0):
            raise Malformed("sparse indices out of range or not strictly increasing")
        if n == 0:
            vals = np.zeros(d)
            vals[idx] = _from_bits(bits[:, wi:]).astype("<u8").view("<f8")
            if np.any(vals[idx] == 0):
                raise Malformed("sparse entry encodes a zero")
            return _raw_message(r, vals)
        sign = bits[:, wi].astype(np.int64)
        mag = _from_bits(bits[:, wi + 1:]).astype(np.int64) + 1
        levels = np.zeros(d, dtype=np.int64)
        levels[idx] = np.where(sign == 1, -mag, mag)
    if np.any(np.abs(levels) > n):
        raise Malformed(f"level outside [-{n}, {n}]")
    if r == 0 and np.any(levels):
        raise Malformed("zero scale with non-zero levels")
    return QuantizedMessage(float(r), levels, int(n))


def peek_mode(data: bytes) -> str:
    """Wire mode named in an encoded message's header."""
    if len(data) < _HEADER.size:
        raise Malformed("truncated header")
    tag = data[_HEADER.size - 1]
    if tag not in _MODE_NAMES:
        raise Malformed(f"unknown mode tag {tag}")
    return _MODE_NAMES[tag]


def _raw_message(r, values) -> QuantizedMessage:
    if not np.all(np.isfinite(values)):
        raise Malformed("non-finite raw value")
    return QuantizedMessage(float(r), values, 0)
