"""Numpy implementations of the compiled kernels, bit-identical to ``_kernels``.

128-bit products are assembled from 32-bit limbs so every step stays exact in
``uint64`` arithmetic (numpy wraps silently on array overflow, which the
limb arithmetic relies on).
"""
from __future__ import annotations

import numpy as np

from .hashing import GAMMA, MIX_C1, MIX_C2, PRIME

_U = np.uint64
_M32 = _U(0xFFFFFFFF)
_P = _U(PRIME)
_S32 = _U(32)
_S61 = _U(61)
_S3 = _U(3)
_ONE = _U(1)


def _u64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.uint64)


def _mul128(a: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a_lo, a_hi = a & _M32, a >> _S32
    x_lo, x_hi = x & _M32, x >> _S32
    ll = a_lo * x_lo
    lh = a_lo * x_hi
    hl = a_hi * x_lo
    hh = a_hi * x_hi
    mid = (ll >> _S32) + (lh & _M32) + (hl & _M32)
    lo = (ll & _M32) | ((mid & _M32) << _S32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, lo


def _affine(a, x: np.ndarray, b) -> np.ndarray:
    """(a * x + b) mod P for x < P."""
    hi, lo = _mul128(np.full_like(x, a), x)
    lo2 = lo + _U(b)
    hi = hi + (lo2 < lo).astype(np.uint64)
    r = (lo2 & _P) + ((hi << _S3) | (lo2 >> _S61))
    r = (r & _P) + (r >> _S61)
    return np.where(r >= _P, r - _P, r)


def _scale(v: np.ndarray, m) -> np.ndarray:
    """floor(v * m / P) for v < P."""
    hi, lo = _mul128(v, np.full_like(v, m))
    q0 = (hi << _S3) | (lo >> _S61)
    r0 = lo & _P
    t = q0 + r0
    carry = (t < q0).astype(np.uint64)
    q1 = (carry << _S3) | (t >> _S61)
    r1 = t & _P
    return q0 + q1 + (q1 + r1 >= _P).astype(np.uint64)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U(30))) * _U(MIX_C1)
    z = (z ^ (z >> _U(27))) * _U(MIX_C2)
    return z ^ (z >> _U(31))


def hash_mod(keys, a, b, rng) -> np.ndarray:
    keys = _u64(keys)
    return _affine(a, keys % _P, b) % _U(rng) + _ONE


def hash_scale(keys, a, b, rng) -> np.ndarray:
    keys = _u64(keys)
    return _scale(_affine(a, keys % _P, b), rng) + _ONE


def update(counters, row_a, row_b, col_a, col_b, val_a, val_b, w, keys, items, slot_items=True) -> None:
    keys = _u64(keys)
    items = _u64(items)
    if items.shape[0] != keys.shape[0]:
        raise ValueError("keys and items differ in length")
    p, m, s = counters.shape
    if len(row_a) != p or len(row_b) != p:
        raise ValueError("row hash count does not match p")
    if keys.shape[0] == 0:
        return
    if slot_items:
        items = _mix64((items + _ONE) * _U(GAMMA))
    it = items % _P
    cols = (_affine(col_a, it, col_b) % _U(s)).astype(np.intp)
    vals = (_scale(_affine(val_a, it, val_b), w) + _ONE).astype(counters.dtype)
    x = keys % _P
    for k in range(p):
        rows = (_affine(int(row_a[k]), x, int(row_b[k])) % _U(m)).astype(np.intp)
        np.minimum.at(counters[k], (rows, cols), vals)


def digest_bytes(raw) -> int:
    from .hashing import digest_key

    return digest_key(bytes(raw))


def splitmix_block(seed: int, start: int, n: int) -> np.ndarray:
    idx = np.arange(n, dtype=np.uint64) + _U(start) + _ONE
    return _mix64(_U(seed) + idx * _U(GAMMA))
