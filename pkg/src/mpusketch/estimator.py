"""Independent sketch copies, median combining and the parameter planner.

Planner constants (absorbing the big-O factors of the accuracy bound):

* ``s = ceil(1 / eps**2)``
* ``m = ceil((2 |F|) ** (2 / p))``, computed as an exact integer root so
  ``m**p >= 4 |F|**2`` always holds
* ``w = ceil(5 |T|**2 / s)``, i.e. ``w * s >= 5 |T|**2``
* ``copies`` = smallest odd integer ``>= 8 ln(1 / delta)``

Every quantity is computed in exact rational arithmetic from the decimal
form of ``eps`` so e.g. ``eps = 0.1`` gives ``s = 100``, not 101.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import BinaryIO

import numpy as np

from .errors import MemoryCapError, SketchFormatError, SlotRangeError
from .hashing import MASK64, derive_seed
from .sketch import DEFAULT_MEMORY_CAP, EstimateBreakdown, MpuParams, MpuSketch

_COUNT = struct.Struct("<I")
_ECHO = struct.Struct("<8Q")


def _exact(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _ceil_root(n: int, p: int) -> int:
    """Smallest integer r with r**p >= n (integer Newton iteration, no floats)."""
    if n <= 1:
        return 1
    x = 1 << -(-n.bit_length() // p)  # an upper bound on the floor root
    while True:
        y = ((p - 1) * x + n // x ** (p - 1)) // p
        if y >= x:
            break
        x = y
    return x if x ** p >= n else x + 1


@dataclass(frozen=True)
class PlanInput:
    epsilon: float
    delta: float
    epoch_len: int
    flow_count: int
    p: int = 3

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.epoch_len < 1 or self.flow_count < 1 or self.p < 1:
            raise ValueError("epoch_len, flow_count and p must be >= 1")


@dataclass(frozen=True)
class Plan:
    s: int
    w: int
    m: int
    copies: int
    p: int
    epoch_len: int
    flow_count: int

    @property
    def params(self) -> MpuParams:
        return MpuParams(self.p, self.m, self.s, self.w)

    @property
    def nbytes(self) -> int:
        return self.copies * self.params.nbytes

    def as_dict(self) -> dict:
        d = asdict(self)
        d["counter_width"] = self.params.width
        d["bytes"] = self.nbytes
        return d


def plan(inp: PlanInput, memory_cap: int = DEFAULT_MEMORY_CAP) -> Plan:
    eps = _exact(inp.epsilon)
    s = math.ceil(1 / (eps * eps))
    m = _ceil_root((2 * inp.flow_count) ** 2, inp.p)
    w = -(-5 * inp.epoch_len ** 2 // s)
    copies = max(1, math.ceil(8 * math.log(1 / inp.delta)))
    if copies % 2 == 0:
        copies += 1
    out = Plan(s=s, w=w, m=m, copies=copies, p=inp.p,
               epoch_len=inp.epoch_len, flow_count=inp.flow_count)
    if out.nbytes > memory_cap:
        raise MemoryCapError(out.nbytes, memory_cap)
    return out


def median(values):
    """Middle order statistic of an odd-length sequence."""
    ordered = sorted(values)
    if len(ordered) % 2 == 0:
        raise ValueError("median needs an odd number of values")
    return ordered[len(ordered) // 2]


class MpuEnsemble:
    """``plan.copies`` sketches with identical parameters and independent seeds.

    Copy ``c`` is seeded with ``derive_seed(master_seed, c)``.
    """

    def __init__(self, plan: Plan, master_seed: int, *, memory_cap: int = DEFAULT_MEMORY_CAP,
                 sketches: list[MpuSketch] | None = None):
        if plan.copies < 1 or plan.copies % 2 == 0:
            raise ValueError(f"copies must be odd and >= 1, got {plan.copies}")
        if plan.nbytes > memory_cap:
            raise MemoryCapError(plan.nbytes, memory_cap)
        self.plan = plan
        self.params = plan.params
        self.master_seed = master_seed & MASK64
        if sketches is None:
            sketches = [MpuSketch(self.params, derive_seed(self.master_seed, c),
                                  epoch_len=plan.epoch_len, memory_cap=memory_cap)
                        for c in range(plan.copies)]
        self.sketches = sketches

    def __len__(self) -> int:
        return len(self.sketches)

    @property
    def epoch_len(self) -> int:
        return self.plan.epoch_len

    @property
    def nbytes(self) -> int:
        return sum(sk.nbytes for sk in self.sketches)

    def update(self, key: int, slot: int) -> None:
        if not 0 <= slot < self.plan.epoch_len:
            raise SlotRangeError(f"slot {slot} outside epoch [0, {self.plan.epoch_len})")
        for sk in self.sketches:
            sk.update(key, slot)

    def update_many(self, keys, slots) -> None:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        slots = np.asarray(slots)
        self.sketches[0]._check_slots(slots)
        slots = np.ascontiguousarray(slots, dtype=np.uint64)
        for sk in self.sketches:
            sk._apply(keys, slots)

    def update_typed(self, key: int, type_key: int) -> None:
        for sk in self.sketches:
            sk.update_typed(key, type_key)

    def update_typed_many(self, keys, type_keys) -> None:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        type_keys = np.ascontiguousarray(type_keys, dtype=np.uint64)
        for sk in self.sketches:
            sk._apply(keys, type_keys, slot_items=False)

    def estimates(self, key_i: int, key_j: int, strict: bool = False) -> list[EstimateBreakdown]:
        return [sk.estimate(key_i, key_j, strict) for sk in self.sketches]

    def estimate_median(self, key_i: int, key_j: int, strict: bool = False) -> Fraction:
        return median(b.estimate for b in self.estimates(key_i, key_j, strict))

    def merge(self, other: MpuEnsemble) -> None:
        if len(other) != len(self):
            raise SketchFormatError("ensembles differ in copy count")
        for a, b in zip(self.sketches, other.sketches):
            a.merge(b)

    def copy(self) -> MpuEnsemble:
        return MpuEnsemble(self.plan, self.master_seed, memory_cap=max(self.plan.nbytes, DEFAULT_MEMORY_CAP),
                           sketches=[sk.copy() for sk in self.sketches])

    def __eq__(self, other) -> bool:
        if not isinstance(other, MpuEnsemble):
            return NotImplemented
        return (self.plan == other.plan and self.master_seed == other.master_seed
                and all(a == b for a, b in zip(self.sketches, other.sketches)))

    # -- file format: u32 copies, sketch blocks, plan echo -------------------

    def to_bytes(self) -> bytes:
        q = self.plan
        parts = [_COUNT.pack(len(self.sketches))]
        parts += [sk.to_bytes() for sk in self.sketches]
        parts.append(_ECHO.pack(q.p, q.m, q.s, q.w, q.copies, q.epoch_len, q.flow_count, self.master_seed))
        return b"".join(parts)

    def save(self, sink: BinaryIO) -> None:
        sink.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, memory_cap: int = DEFAULT_MEMORY_CAP) -> MpuEnsemble:
        return cls.load(io.BytesIO(data), memory_cap=memory_cap)

    @classmethod
    def load(cls, source: BinaryIO, memory_cap: int = DEFAULT_MEMORY_CAP) -> MpuEnsemble:
        raw = source.read(_COUNT.size)
        if len(raw) != _COUNT.size:
            raise SketchFormatError("truncated ensemble header")
        (count,) = _COUNT.unpack(raw)
        if count < 1 or count % 2 == 0:
            raise SketchFormatError(f"copy count must be odd and >= 1, got {count}")
        sketches = [MpuSketch.load(source, memory_cap=memory_cap) for _ in range(count)]
        echo = source.read(_ECHO.size)
        if len(echo) != _ECHO.size:
            raise SketchFormatError("truncated plan echo")
        if source.read(1):
            raise SketchFormatError("trailing bytes after plan echo")
        p, m, s, w, copies, epoch_len, flow_count, seed = _ECHO.unpack(echo)
        try:
            q = Plan(s=s, w=w, m=m, copies=copies, p=p, epoch_len=epoch_len, flow_count=flow_count)
            params = q.params
        except ValueError as exc:
            raise SketchFormatError(str(exc)) from None
        if copies != count or any(sk.params != params for sk in sketches) or epoch_len < 1:
            raise SketchFormatError("plan echo disagrees with sketch blocks")
        for sk in sketches:
            sk.epoch_len = epoch_len
        return cls(q, seed, memory_cap=max(memory_cap, q.nbytes), sketches=sketches)


def new_ensemble(plan: Plan, master_seed: int, **kwargs) -> MpuEnsemble:
    return MpuEnsemble(plan, master_seed, **kwargs)
