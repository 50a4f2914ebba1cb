"""Acceptance suite: one PASS/FAIL line per criterion.

Each test records its verdict in ``RESULTS``; ``conftest.py`` prints the
collected lines at the end of the session.  Run directly with
``python tests/test_acceptance.py`` to get the same lines on stdout.
"""
from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest

from mpusketch import _backend, bench
from mpusketch.adapters import (GroupMap, LagConfig, expand_lagged, update_group_many, update_lagged,
                                virtual_key_for)
from mpusketch.estimator import MpuEnsemble, PlanInput, plan
from mpusketch.hashing import flow_key
from mpusketch.ingest import SynthSpec, generate
from mpusketch.oracle import ExactTracker, freq_stats, join_size
from mpusketch.sketch import MpuParams, MpuSketch

RESULTS: dict[int, str] = {}
SEED = 0


def record(n: int, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)


def _rows_detail(rows, fmt) -> str:
    return "; ".join(fmt(r) for r in rows)


# -- 1: structural ---------------------------------------------------------

def _random_stream(rng, n_keys=30, epoch=500, n=4000):
    keys = np.array([flow_key(f"k{i}") for i in range(n_keys)], dtype=np.uint64)
    return keys[rng.integers(0, n_keys, n)], rng.integers(0, epoch, n).astype(np.uint64)


def test_criterion_1_structural():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    params = MpuParams(3, 16, 64, 5000)
    checks = {}

    sk = MpuSketch(params, 11, epoch_len=500)
    checks["init"] = bool((sk.counters == params.w + 1).all())

    touched_ok = True
    for _ in range(200):
        before = sk.counters.copy()
        sk.update(int(flow_key(f"k{rng.integers(0, 30)}")), int(rng.integers(0, 500)))
        touched_ok &= int((sk.counters != before).sum()) <= params.p
    checks["touched<=p"] = touched_ok

    keys, slots = _random_stream(rng)
    mono = MpuSketch(params, 12, epoch_len=500)
    monotone = True
    for lo in range(0, keys.size, 250):
        before = mono.counters.copy()
        mono.update_many(keys[lo:lo + 250], slots[lo:lo + 250])
        monotone &= bool((mono.counters <= before).all())
    checks["monotone"] = monotone

    base = MpuSketch(params, 13, epoch_len=500)
    base.update_many(keys, slots)
    perm = rng.permutation(keys.size)
    dup = np.concatenate([perm, rng.choice(keys.size, 1000)])
    shuffled = MpuSketch(params, 13, epoch_len=500)
    shuffled.update_many(keys[dup], slots[dup])
    checks["dup/perm"] = shuffled == base

    uniq = np.unique(keys)
    sym = all(base.estimate(int(a), int(b)) == base.estimate(int(b), int(a))
              for a, b in zip(uniq[:-1], uniq[1:]))
    checks["symmetry"] = sym

    half = keys.size // 2
    left, right = MpuSketch(params, 13, epoch_len=500), MpuSketch(params, 13, epoch_len=500)
    left.update_many(keys[:half], slots[:half])
    right.update_many(keys[half:], slots[half:])
    left.merge(right)
    checks["merge"] = left == base

    pl = plan(PlanInput(0.2, 0.1, 500, 30, 3))
    ens = MpuEnsemble(pl, 14)
    ens.update_many(keys, slots)
    checks["roundtrip"] = (MpuSketch.from_bytes(base.to_bytes()) == base
                           and MpuEnsemble.from_bytes(ens.to_bytes()) == ens)

    elapsed = time.perf_counter() - t0
    passed = all(checks.values()) and elapsed < 60
    record(1, passed, " ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items())
           + f" ({elapsed:.1f}s)")
    assert passed, checks


# -- 2: accuracy of the median of copies -----------------------------------

def test_criterion_2_median_accuracy():
    t0 = time.perf_counter()
    rows = [r for r in bench.accuracy(eps=0.2, delta=0.1, epoch_len=2000, flow_count=100, p=3,
                                      cors=(50, 300, 1000), trials=300, seed=SEED)
            if r["check"] == "accuracy"]
    elapsed = time.perf_counter() - t0
    passed = all(r["passed"] for r in rows) and elapsed < 600
    thr = 0.1 + 3 * bench.binomial_se(0.1, 300)
    record(2, passed, _rows_detail(rows, lambda r: f"cor={r['truth']} fail={r['failure_rate']:.3f}")
           + f" (<= {thr:.3f}, {elapsed:.1f}s)")
    assert passed


# -- 3: single-copy bias and variance --------------------------------------

def test_criterion_3_bias_and_variance():
    t0 = time.perf_counter()
    row = bench.bias_variance(s=1024, epoch_len=5000, cor=500, trials=500, seed=SEED)
    elapsed = time.perf_counter() - t0
    assert row["w"] * row["s"] >= 5 * row["epoch_len"] ** 2
    assert row["collision_bound"] <= 1e-3
    tol = 4 * row["sd"] / math.sqrt(500)
    passed = row["passed"] and elapsed < 600
    record(3, passed, f"mean={row['mean']:.2f} (|bias| {abs(row['bias']):.2f} <= {tol:.2f}) "
                      f"var={row['variance']:.0f} <= {1.5 * row['variance_bound']:.0f} ({elapsed:.1f}s)")
    assert passed


# -- 4: row-collision probability ------------------------------------------

def test_criterion_4_row_collisions():
    t0 = time.perf_counter()
    rows = bench.collisions(flow_count=64, p=2, ms=(64, 128, 256), trials=1000, seed=SEED)
    elapsed = time.perf_counter() - t0
    passed = all(r["passed"] for r in rows) and elapsed < 120
    record(4, passed, _rows_detail(rows[:-1], lambda r: f"m={r['m']} rate={r['rate']:.3f}/bound={r['bound']:.4f}")
           + f"; decreasing={'yes' if rows[-1]['passed'] else 'NO'} ({elapsed:.1f}s)")
    assert passed


# -- 5: value discretization -----------------------------------------------

def test_criterion_5_discretization():
    t0 = time.perf_counter()
    rows = bench.discretization(s=256, epoch_len=1024, bounds=(0.5, 0.1, 0.02), trials=500, seed=SEED)
    elapsed = time.perf_counter() - t0
    for r in rows:
        assert math.isclose(r["bound"], r["target_bound"], rel_tol=1e-3)
    passed = all(r["passed"] for r in rows) and elapsed < 300
    record(5, passed, _rows_detail(rows, lambda r: f"bound={r['target_bound']} rate={r['rate']:.3f}"
                                                  f" (rounding-adjusted {r['rounding_adjusted_rate']:.3f})")
           + f" ({elapsed:.1f}s)")
    assert passed


# -- 6: adapters -----------------------------------------------------------

def _group_equivalence() -> bool:
    rng = np.random.default_rng(SEED)
    flows = [f"f{i}" for i in range(20)]
    ids = [flows[i] for i in rng.integers(0, 20, 3000)]
    slots = rng.integers(0, 400, 3000)
    pl = plan(PlanInput(0.2, 0.1, 400, 20, 3))
    grouped, raw = MpuEnsemble(pl, 5), MpuEnsemble(pl, 5)
    update_group_many(grouped, GroupMap.from_mapping({f: [f] for f in flows}), ids, slots)
    raw.update_many(np.array([flow_key(f) for f in ids], dtype=np.uint64), slots)
    return grouped == raw


def _lag_equivalence() -> bool:
    rng = np.random.default_rng(SEED + 1)
    slots = np.unique(rng.integers(0, 400, 150))
    pl = plan(PlanInput(0.2, 0.1, 400, 4, 3))
    lagged, raw = MpuEnsemble(pl, 6), MpuEnsemble(pl, 6)
    lc = LagConfig(0, "j")
    for t in slots.tolist():
        update_lagged(lagged, lc, t)
    vk = virtual_key_for("j", 0)
    raw.update_many(np.full(slots.size, vk, dtype=np.uint64), slots)
    keys, lt = expand_lagged(np.full(slots.size, vk, dtype=np.uint64), slots, 0)
    batch = MpuEnsemble(pl, 6)
    batch.update_many(keys, lt)
    return lagged == raw == batch


def test_criterion_6_adapters():
    t0 = time.perf_counter()
    eq_group, eq_lag = _group_equivalence(), _lag_equivalence()
    rows = bench.adapters(trials=200, seed=SEED)
    elapsed = time.perf_counter() - t0
    passed = eq_group and eq_lag and all(r["passed"] for r in rows) and elapsed < 600
    detail = (f"singleton-group={'ok' if eq_group else 'BAD'} tau0={'ok' if eq_lag else 'BAD'}; "
              + _rows_detail(rows, lambda r: f"{r['adapter']} {r['mean']:.1f} vs {r['truth']}"
                                             f" (4SE {4 * r['sd'] / math.sqrt(r['trials']):.2f}"
                                             f"{'' if r['passed'] else ' OUT'})")
              + f" ({elapsed:.1f}s)")
    record(6, passed, detail)
    assert passed


# -- 7: oracle cross-checks ------------------------------------------------

def _brute_cor_tau(fi: set, fj: set, tau: int, epoch: int) -> int:
    total = 0
    for w in range(tau + 1):
        for t in range(epoch):
            for u in range(epoch):
                total += t in fi and u in fj and u == t + w
    return total


def test_criterion_7_oracle():
    t0 = time.perf_counter()
    freq, distinct = freq_stats([1, 2, 1, 3, 3, 1])
    example = freq[1] == 3 and freq[4] == 0 and distinct == 3

    rng = np.random.default_rng(SEED)
    joins = True
    for _ in range(100):
        epoch = int(rng.integers(1, 200))
        fi = set(rng.choice(epoch, int(rng.integers(0, epoch + 1)), replace=False).tolist())
        fj = set(rng.choice(epoch, int(rng.integers(0, epoch + 1)), replace=False).tolist())
        tr = ExactTracker(epoch)
        for t in fi:
            tr.record("i", t)
        for t in fj:
            tr.record("j", t)
        joins &= join_size(sorted(fi), sorted(fj)) == tr.cor("i", "j")

    lags = True
    for _ in range(100):
        epoch, tau = int(rng.integers(1, 120)), int(rng.integers(0, 6))
        fi = set(rng.choice(epoch, int(rng.integers(0, epoch + 1)), replace=False).tolist())
        fj = set(rng.choice(epoch, int(rng.integers(0, epoch + 1)), replace=False).tolist())
        tr = ExactTracker(epoch)
        for t in fi:
            tr.record("i", t)
        for t in fj:
            tr.record("j", t)
        lags &= tr.cor_tau("i", "j", tau) == _brute_cor_tau(fi, fj, tau, epoch)

    elapsed = time.perf_counter() - t0
    passed = example and joins and lags and elapsed < 60
    record(7, passed, f"freq example={'ok' if example else 'BAD'} join==cor x100={'ok' if joins else 'BAD'} "
                      f"cor_tau brute x100={'ok' if lags else 'BAD'} ({elapsed:.1f}s)")
    assert passed


# -- 8: space accounting ---------------------------------------------------

def test_criterion_8_space():
    t0 = time.perf_counter()
    pl = plan(PlanInput(0.1, 0.1, 4000, 100, 3))
    ens = MpuEnsemble(pl, 1)
    width = pl.params.width
    expected = pl.copies * pl.p * pl.m * pl.s * width // 8
    exact = ens.nbytes == pl.nbytes == expected == sum(sk.counters.nbytes for sk in ens.sketches)
    roots = True
    for e in range(4, 21):
        flows = 2 ** e
        p = math.ceil(math.log2(flows))
        q = plan(PlanInput(0.5, 0.5, 16, flows, p))
        roots &= q.m ** q.p >= 4 * flows ** 2 and (q.m - 1) ** q.p < 4 * flows ** 2
    elapsed = time.perf_counter() - t0
    passed = exact and roots and elapsed < 60
    record(8, passed, f"bytes={ens.nbytes} == copies*p*m*s*{width}/8: {'ok' if exact else 'BAD'}; "
                      f"m^p >= 4|F|^2 for |F|=2^4..2^20: {'ok' if roots else 'BAD'} ({elapsed:.1f}s)")
    assert passed


# -- 9: throughput ---------------------------------------------------------

TARGET_RATE = 1_000_000


def test_criterion_9_throughput():
    trace = generate(SynthSpec(1000, 101_000, 0.1, ((0, 1, 500),), SEED))
    keys, slots = trace.keys(), trace.slots.astype(np.uint64)
    assert len(trace) >= 10_000_000
    sk = MpuSketch(MpuParams(4, 64, 128, 1 << 20), SEED, epoch_len=101_000)
    t0 = time.perf_counter()
    sk.update_many(keys, slots)
    elapsed = time.perf_counter() - t0
    rate = len(trace) / elapsed
    passed = rate >= TARGET_RATE / 2
    note = "" if rate >= TARGET_RATE else " (below target, informative)"
    record(9, passed, f"{rate / 1e6:.2f}M updates/s over {len(trace):,} events at p=4 "
                      f"[{_backend.NAME}] target {TARGET_RATE / 1e6:.0f}M/s{note}")
    assert passed


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print()
    for n in sorted(RESULTS):
        print(RESULTS[n])
    sys.exit(code)
