"""Multiplexed min-value (MPU) sketch: a ``p x m x s`` array of counters.

A flow is assigned one row in each of the ``p`` blocks by the row hashes
``h_k``; an activated slot ``t`` lands in column ``g(t)`` and lowers the
counter there to ``phi(t)`` if that is smaller.  Each column therefore holds
the minimum value hash over the slots that reached it, and two flows are
compared column by column.

Counters start at the sentinel ``w + 1`` ("nothing seen"), so the identity of
``min`` is the fresh state.  That makes updates idempotent, order free and
mergeable by element-wise minimum.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO

import numpy as np

from . import _backend
from .errors import (
    IncompatibleSketchError,
    MemoryCapError,
    SketchFormatError,
    SlotRangeError,
)
from .hashing import MASK64, PRIME, PairwiseHash, new_pairwise, slot_item

MAGIC = b"MPUS"
VERSION = 1
DEFAULT_MEMORY_CAP = 1 << 30

_HEADER = struct.Struct("<4sHBB5Q")
_PAIR = struct.Struct("<2Q")
_CHECKSUM = struct.Struct("<Q")
_DTYPES = {8: np.uint8, 16: np.uint16, 32: np.uint32, 64: np.uint64}


def counter_width(w: int) -> int:
    """Smallest of 8/16/32/64 bits that holds the sentinel ``w + 1``."""
    for bits in (8, 16, 32, 64):
        if w + 1 < (1 << bits):
            return bits
    raise ValueError(f"w={w} does not fit a 64-bit counter")


@dataclass(frozen=True)
class MpuParams:
    p: int
    m: int
    s: int
    w: int

    def __post_init__(self):
        for name in ("p", "m", "s", "w"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.m > PRIME or self.s > PRIME or self.w > PRIME:
            raise ValueError("m, s and w must not exceed the hash modulus 2**61-1")
        counter_width(self.w)

    @property
    def width(self) -> int:
        return counter_width(self.w)

    @property
    def dtype(self):
        return _DTYPES[self.width]

    @property
    def nbytes(self) -> int:
        return self.p * self.m * self.s * self.width // 8


@dataclass(frozen=True)
class EstimateBreakdown:
    """Accumulators of one pairwise estimate.

    ``a`` counts columns whose ``2p`` counters all agree, ``b`` the columns
    whose minimum is below the sentinel and ``c`` the sum of column minima.
    Counters are read on the unit scale (value / w), so the estimate is
    ``a * b * w / c``; it is 0 when no column was touched (``b == 0``).
    """

    a: int
    b: int
    c: int
    w: int

    @property
    def estimate(self) -> Fraction:
        if self.b == 0 or self.c == 0:
            return Fraction(0)
        return Fraction(self.a * self.b * self.w, self.c)


class MpuSketch:
    """One MPU sketch.

    Parameters
    ----------
    params : MpuParams
    master_seed : int
        64-bit seed; row hash ``k`` uses derivation index ``k``, the column
        hash index ``p`` and the value hash index ``p + 1``.
    epoch_len : int, optional
        When given, slots passed to :meth:`update` must lie in
        ``[0, epoch_len)``.
    memory_cap : int
        Upper bound on counter storage in bytes.
    """

    def __init__(self, params: MpuParams, master_seed: int, *, epoch_len: int | None = None,
                 memory_cap: int = DEFAULT_MEMORY_CAP, hashes: list[PairwiseHash] | None = None,
                 counters: np.ndarray | None = None):
        if params.nbytes > memory_cap:
            raise MemoryCapError(params.nbytes, memory_cap)
        if epoch_len is not None and epoch_len < 1:
            raise ValueError(f"epoch_len must be >= 1, got {epoch_len}")
        self.params = params
        self.master_seed = master_seed & MASK64
        self.epoch_len = epoch_len
        if hashes is None:
            p = params.p
            hashes = [new_pairwise(self.master_seed, k, params.m) for k in range(p)]
            hashes.append(new_pairwise(self.master_seed, p, params.s))
            hashes.append(new_pairwise(self.master_seed, p + 1, params.w, reduce="scale"))
        self.row_hashes = tuple(hashes[:params.p])
        self.col_hash = hashes[params.p]
        self.value_hash = hashes[params.p + 1]
        self._row_a = np.array([h.a for h in self.row_hashes], dtype=np.uint64)
        self._row_b = np.array([h.b for h in self.row_hashes], dtype=np.uint64)
        if counters is None:
            counters = np.full((params.p, params.m, params.s), params.w + 1, dtype=params.dtype)
        self.counters = counters

    # -- updates -----------------------------------------------------------

    def _check_slots(self, slots: np.ndarray) -> None:
        if slots.size == 0:
            return
        lo, hi = int(slots.min()), int(slots.max())
        if lo < 0 or (self.epoch_len is not None and hi >= self.epoch_len):
            bad = lo if lo < 0 else hi
            raise SlotRangeError(f"slot {bad} outside epoch [0, {self.epoch_len})")

    def _apply(self, keys: np.ndarray, items: np.ndarray, kernels=None, slot_items: bool = True) -> None:
        k = kernels or _backend.kernels
        k.update(self.counters, self._row_a, self._row_b,
                 self.col_hash.a, self.col_hash.b, self.value_hash.a, self.value_hash.b,
                 self.params.w, keys, items, slot_items)

    def update(self, key: int, slot: int) -> None:
        if slot < 0 or (self.epoch_len is not None and slot >= self.epoch_len):
            raise SlotRangeError(f"slot {slot} outside epoch [0, {self.epoch_len})")
        self._apply(np.array([key], dtype=np.uint64), np.array([slot], dtype=np.uint64))

    def update_many(self, keys, slots, kernels=None) -> None:
        """Batched :meth:`update`; validates every slot before touching counters."""
        slots = np.asarray(slots)
        self._check_slots(slots)
        self._apply(np.ascontiguousarray(keys, dtype=np.uint64),
                    np.ascontiguousarray(slots, dtype=np.uint64), kernels)

    def update_typed(self, key: int, type_key: int) -> None:
        """Like :meth:`update` but with an arbitrary 64-bit item type in place of the slot."""
        self._apply(np.array([key], dtype=np.uint64), np.array([type_key], dtype=np.uint64),
                    slot_items=False)

    def update_typed_many(self, keys, type_keys, kernels=None) -> None:
        self._apply(np.ascontiguousarray(keys, dtype=np.uint64),
                    np.ascontiguousarray(type_keys, dtype=np.uint64), kernels, slot_items=False)

    # -- queries -----------------------------------------------------------

    def rows(self, key: int) -> tuple[int, ...]:
        """0-based row of ``key`` in each block."""
        return tuple(h.eval(key) - 1 for h in self.row_hashes)

    def cell(self, item: int, typed: bool = False) -> tuple[int, int]:
        """0-based column and counter value an item (slot, or type key if ``typed``) maps to."""
        x = item if typed else slot_item(item)
        return self.col_hash.eval(x) - 1, self.value_hash.eval(x)

    def estimate(self, key_i: int, key_j: int, strict: bool = False) -> EstimateBreakdown:
        """Pairwise estimate; ``strict`` only counts agreeing columns that were touched."""
        p, w = self.params.p, self.params.w
        blocks = np.arange(p)
        stacked = np.concatenate([self.counters[blocks, list(self.rows(key_i))],
                                  self.counters[blocks, list(self.rows(key_j))]])
        mn = stacked.min(axis=0)
        mx = stacked.max(axis=0)
        touched = mn <= w
        agree = mn == mx
        if strict:
            agree &= touched
        if self.params.width <= 32:
            c = int(mn.sum(dtype=np.uint64))
        else:
            c = sum(int(v) for v in mn)
        return EstimateBreakdown(int(agree.sum()), int(touched.sum()), c, w)

    # -- structure ---------------------------------------------------------

    @property
    def hashes(self) -> tuple[PairwiseHash, ...]:
        return (*self.row_hashes, self.col_hash, self.value_hash)

    @property
    def nbytes(self) -> int:
        return self.params.nbytes

    def compatible(self, other: MpuSketch) -> bool:
        return self.params == other.params and self.hashes == other.hashes

    def merge(self, other: MpuSketch) -> None:
        """Fold ``other`` into this sketch (element-wise minimum)."""
        if not self.compatible(other):
            raise IncompatibleSketchError("sketches differ in parameters or hash seeds")
        np.minimum(self.counters, other.counters, out=self.counters)

    def copy(self) -> MpuSketch:
        return MpuSketch(self.params, self.master_seed, epoch_len=self.epoch_len,
                         hashes=list(self.hashes), counters=self.counters.copy(),
                         memory_cap=max(self.nbytes, DEFAULT_MEMORY_CAP))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MpuSketch):
            return NotImplemented
        return (self.compatible(other) and self.master_seed == other.master_seed
                and np.array_equal(self.counters, other.counters))

    def __repr__(self) -> str:
        q = self.params
        return f"MpuSketch(p={q.p}, m={q.m}, s={q.s}, w={q.w}, seed={self.master_seed:#x})"

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        q = self.params
        buf = bytearray(_HEADER.pack(MAGIC, VERSION, q.width, 0, q.p, q.m, q.s, q.w, self.master_seed))
        for h in self.hashes:
            buf += _PAIR.pack(h.a, h.b)
        buf += self.counters.astype(np.dtype(q.dtype).newbyteorder("<"), copy=False).tobytes(order="C")
        buf += _CHECKSUM.pack(checksum(buf))
        return bytes(buf)

    def save(self, sink: BinaryIO) -> None:
        sink.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, **kwargs) -> MpuSketch:
        stream = io.BytesIO(data)
        sk = cls.load(stream, **kwargs)
        if stream.read(1):
            raise SketchFormatError("trailing bytes after sketch block")
        return sk

    @classmethod
    def load(cls, source: BinaryIO, *, epoch_len: int | None = None,
             memory_cap: int = DEFAULT_MEMORY_CAP) -> MpuSketch:
        """Read exactly one sketch block from ``source``."""
        head = _read_exact(source, _HEADER.size)
        magic, version, width, reserved, p, m, s, w, seed = _HEADER.unpack(head)
        if magic != MAGIC:
            raise SketchFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise SketchFormatError(f"unsupported version {version}")
        if reserved != 0:
            raise SketchFormatError("reserved byte must be zero")
        try:
            params = MpuParams(p, m, s, w)
        except ValueError as exc:
            raise SketchFormatError(str(exc)) from None
        if width != params.width:
            raise SketchFormatError(f"counter width {width} does not match w={w}")
        if params.nbytes > memory_cap:
            raise MemoryCapError(params.nbytes, memory_cap)
        pairs_raw = _read_exact(source, _PAIR.size * (p + 2))
        ranges = [m] * p + [s, w]
        hashes = []
        for k in range(p + 2):
            a, b = _PAIR.unpack_from(pairs_raw, k * _PAIR.size)
            try:
                hashes.append(PairwiseHash(a, b, ranges[k], "scale" if k == p + 1 else "mod"))
            except ValueError as exc:
                raise SketchFormatError(str(exc)) from None
        body = _read_exact(source, params.nbytes)
        (stored,) = _CHECKSUM.unpack(_read_exact(source, _CHECKSUM.size))
        if checksum(head + pairs_raw + body) != stored:
            raise SketchFormatError("checksum mismatch")
        counters = np.frombuffer(body, dtype=np.dtype(params.dtype).newbyteorder("<"))
        counters = counters.astype(params.dtype).reshape(p, m, s)
        if counters.size and (counters.min() < 1 or counters.max() > w + 1):
            raise SketchFormatError("counter value outside {1..w+1}")
        return cls(params, seed, epoch_len=epoch_len, memory_cap=memory_cap,
                   hashes=hashes, counters=counters)


def new_sketch(params: MpuParams, master_seed: int, **kwargs) -> MpuSketch:
    return MpuSketch(params, master_seed, **kwargs)


def checksum(data) -> int:
    return int(_backend.kernels.digest_bytes(np.frombuffer(bytes(data), dtype=np.uint8)))


def _read_exact(source: BinaryIO, n: int) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise SketchFormatError(f"truncated input: wanted {n} bytes, got {len(data)}")
    return data
