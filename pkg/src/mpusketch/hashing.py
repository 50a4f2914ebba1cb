"""Pairwise-independent hashing and 64-bit key digesting.

Every hash in a sketch is drawn from the Carter-Wegman family

    h(x) = ((a * x + b) mod P) mod M + 1,      P = 2**61 - 1

so outputs live in ``{1, ..., M}``.  The value hash of a sketch uses the
``"scale"`` reduction instead of ``mod M``::

    phi(x) = floor(((a * x + b) mod P) * M / P) + 1

which keeps the family pairwise independent up to the same rounding and
makes hashes that share ``(a, b)`` but differ in ``M`` monotone
quantizations of one underlying uniform value.

Mixer
-----
All derived randomness goes through the splitmix64 finalizer::

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)                  (all arithmetic mod 2**64)

``derive_seed(seed, i) = mix64(seed + (i + 1) * GAMMA)`` with
``GAMMA = 0x9E3779B97F4A7C15``, i.e. the ``i``-th output of a splitmix64
stream started at ``seed``.  A hash with derivation index ``i`` under
``seed`` takes ``z = derive_seed(seed, i)``, ``a = z mod P`` (0 remapped to
1) and ``b = mix64(z) mod P``.

``digest_key`` folds a byte string in little-endian 8-byte words (last word
zero padded)::

    state = 0
    for word in words:  state = mix64((state ^ word) + GAMMA)
    digest = mix64((state ^ len(raw)) + GAMMA)

so the empty string digests to ``EMPTY_DIGEST = 0xE220A8397B1DCDAF``.

Slot indices are digested with ``slot_item(t) = mix64((t + 1) * GAMMA)``
before the column and value hashes see them.  An affine hash of raw
consecutive integers gives strongly structured minima; the digest is a
bijection on 64-bit values, so distinct slots stay distinct.
"""
from __future__ import annotations

from dataclasses import dataclass

MASK64 = (1 << 64) - 1
PRIME = (1 << 61) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX_C1 = 0xBF58476D1CE4E5B9
MIX_C2 = 0x94D049BB133111EB
EMPTY_DIGEST = 0xE220A8397B1DCDAF

# namespace bytes prefixed before digesting, so keys of different kinds
# never share a preimage
NS_FLOW = b"\x00"
NS_LAG = b"\x01"
NS_TUPLE = b"\x02"


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_C1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_C2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Return the ``index``-th splitmix64 output of the stream seeded by ``seed``."""
    return mix64((seed + (index + 1) * GAMMA) & MASK64)


def slot_item(slot: int) -> int:
    return derive_seed(0, slot)


def digest_key(raw: bytes) -> int:
    """Digest an arbitrary byte string to an unsigned 64-bit key."""
    state = 0
    n = len(raw)
    full = n - n % 8
    for off in range(0, full, 8):
        word = int.from_bytes(raw[off:off + 8], "little")
        state = mix64(((state ^ word) + GAMMA) & MASK64)
    if full != n:
        word = int.from_bytes(raw[full:], "little")
        state = mix64(((state ^ word) + GAMMA) & MASK64)
    return mix64(((state ^ n) + GAMMA) & MASK64)


def flow_key(flow_id: str) -> int:
    """Digest of a flow (or group) identifier."""
    return digest_key(NS_FLOW + flow_id.encode("utf-8"))


def lag_key(flow_id: str, tau: int) -> int:
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return digest_key(NS_LAG + flow_id.encode("utf-8") + b"\x00" + tau.to_bytes(8, "little"))


def tuple_key(src_key: str, slot: int) -> int:
    """Digest of a ``(src_key, slot)`` item type."""
    return digest_key(NS_TUPLE + src_key.encode("utf-8") + b"\x00" + slot.to_bytes(8, "little"))


@dataclass(frozen=True)
class PairwiseHash:
    a: int
    b: int
    range: int
    reduce: str = "mod"

    def __post_init__(self):
        if not 1 <= self.a < PRIME or not 0 <= self.b < PRIME:
            raise ValueError(f"coefficients out of range: a={self.a}, b={self.b}")
        if not 1 <= self.range <= PRIME:
            raise ValueError(f"range must be in [1, P], got {self.range}")
        if self.reduce not in ("mod", "scale"):
            raise ValueError(f"unknown reduction {self.reduce!r}")

    def __call__(self, key: int) -> int:
        return self.eval(key)

    def eval(self, key: int) -> int:
        v = (self.a * (key % PRIME) + self.b) % PRIME
        if self.reduce == "mod":
            return v % self.range + 1
        return v * self.range // PRIME + 1


def new_pairwise(seed: int, derivation_index: int, range: int, reduce: str = "mod") -> PairwiseHash:
    """Derive a hash deterministically from ``(seed, derivation_index)``.

    Raises ``ValueError`` for ``range`` outside ``[1, P]``.
    """
    if range < 1 or range > PRIME:
        raise ValueError(f"range must be in [1, {PRIME}], got {range}")
    z = derive_seed(seed & MASK64, derivation_index)
    a = z % PRIME or 1
    b = mix64(z) % PRIME
    return PairwiseHash(a, b, range, reduce)
