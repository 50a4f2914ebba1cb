# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: batched sketch updates, vectorised hashing, byte digests.

Mirrors ``_fallback`` exactly; ``_backend`` picks whichever imports.
"""
from libc.stdint cimport uint8_t, uint16_t, uint32_t, uint64_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    #define MPU_P ((uint64_t)0x1FFFFFFFFFFFFFFFULL)
    #define MPU_GAMMA ((uint64_t)0x9E3779B97F4A7C15ULL)

    static inline uint64_t mpu_affine(uint64_t a, uint64_t x, uint64_t b) {
        unsigned __int128 t = (unsigned __int128)a * x + b;
        uint64_t r = (uint64_t)(t & MPU_P) + (uint64_t)(t >> 61);
        r = (r & MPU_P) + (r >> 61);
        if (r >= MPU_P) r -= MPU_P;
        return r;
    }

    static inline uint64_t mpu_scale(uint64_t v, uint64_t m) {
        /* floor(v * m / P) for v < P, without a 128-bit division */
        unsigned __int128 x = (unsigned __int128)v * m;
        uint64_t q0 = (uint64_t)(x >> 61);
        uint64_t r0 = (uint64_t)(x & MPU_P);
        unsigned __int128 t = (unsigned __int128)q0 + r0;
        uint64_t q1 = (uint64_t)(t >> 61);
        uint64_t r1 = (uint64_t)(t & MPU_P);
        return q0 + q1 + ((q1 + r1 >= MPU_P) ? 1 : 0);
    }

    static inline uint64_t mpu_mix64(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    """
    uint64_t MPU_P
    uint64_t MPU_GAMMA
    uint64_t mpu_affine(uint64_t a, uint64_t x, uint64_t b) nogil
    uint64_t mpu_scale(uint64_t v, uint64_t m) nogil
    uint64_t mpu_mix64(uint64_t z) nogil


ctypedef fused counter_t:
    uint8_t
    uint16_t
    uint32_t
    uint64_t


def update(counter_t[:, :, ::1] counters,
           const uint64_t[::1] row_a, const uint64_t[::1] row_b,
           uint64_t col_a, uint64_t col_b, uint64_t val_a, uint64_t val_b,
           uint64_t w,
           const uint64_t[::1] keys, const uint64_t[::1] items, bint slot_items=True):
    """Apply ``C_k[h_k(key)][g(item)] = min(., phi(item))`` for every event.

    With ``slot_items`` the items are slot indices and are digested to
    ``mix64((t + 1) * GAMMA)`` first; otherwise they are used as given.
    """
    cdef Py_ssize_t p = counters.shape[0]
    cdef uint64_t m = <uint64_t>counters.shape[1]
    cdef uint64_t s = <uint64_t>counters.shape[2]
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t i, k
    cdef uint64_t x, it, col, val, r
    if items.shape[0] != n:
        raise ValueError("keys and items differ in length")
    if row_a.shape[0] != p or row_b.shape[0] != p:
        raise ValueError("row hash count does not match p")
    with nogil:
        for i in range(n):
            x = keys[i] % MPU_P
            it = items[i]
            if slot_items:
                it = mpu_mix64((it + 1) * MPU_GAMMA)
            it = it % MPU_P
            col = mpu_affine(col_a, it, col_b) % s
            val = mpu_scale(mpu_affine(val_a, it, val_b), w) + 1
            for k in range(p):
                r = mpu_affine(row_a[k], x, row_b[k]) % m
                if counters[k, r, col] > val:
                    counters[k, r, col] = <counter_t>val


def hash_mod(const uint64_t[::1] keys, uint64_t a, uint64_t b, uint64_t rng):
    cdef Py_ssize_t n = keys.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = mpu_affine(a, keys[i] % MPU_P, b) % rng + 1
    return out


def hash_scale(const uint64_t[::1] keys, uint64_t a, uint64_t b, uint64_t rng):
    cdef Py_ssize_t n = keys.shape[0]
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = mpu_scale(mpu_affine(a, keys[i] % MPU_P, b), rng) + 1
    return out


def digest_bytes(const uint8_t[::1] raw):
    cdef Py_ssize_t n = raw.shape[0]
    cdef Py_ssize_t full = n - n % 8
    cdef Py_ssize_t off, j
    cdef uint64_t state = 0, word
    with nogil:
        off = 0
        while off < full:
            word = 0
            for j in range(8):
                word |= (<uint64_t>raw[off + j]) << (8 * j)
            state = mpu_mix64((state ^ word) + MPU_GAMMA)
            off += 8
        if full != n:
            word = 0
            for j in range(n - full):
                word |= (<uint64_t>raw[full + j]) << (8 * j)
            state = mpu_mix64((state ^ word) + MPU_GAMMA)
        state = mpu_mix64((state ^ <uint64_t>n) + MPU_GAMMA)
    return state


def splitmix_block(uint64_t seed, uint64_t start, Py_ssize_t n):
    """Outputs ``start .. start+n-1`` of the splitmix64 stream seeded by ``seed``."""
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = mpu_mix64(seed + (start + <uint64_t>i + 1) * MPU_GAMMA)
    return out
