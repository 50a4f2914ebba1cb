"""Monte-Carlo checks of the sketch's accuracy bounds.

Every scenario returns plain-dict rows.  A row carries the numbers its
verdict depends on, and :func:`verdict` recomputes PASS/FAIL from those
numbers alone, so a saved report can be re-judged offline.

Checks
------
accuracy        P(|median - Cor| >= eps * sqrt(Cor * |T|)) <= delta + 3 SE
accuracy_abs    P(|median - Cor| >= eps * |T|) <= delta + 3 SE
collisions      P(two flows share all p rows) <= |F|^2 / (2 m^p) + 4 SE, decreasing in m
bias_variance   |mean - Cor| <= 4 SD / sqrt(n) and variance <= 1.5 * Cor * |T| / s
discretization  P(discretized phi loses accuracy vs a w' = 2^32 - 1 run) <= |T|^2 / (2 w s) + 3 SE
adapter         |mean of medians - truth| <= 4 SD / sqrt(n)
null            mean median estimate of disjoint flows <= eps * sqrt(|T|) + 4 SE

Discretization check: each trial builds two sketches from the same
seed, one with value range ``w`` and one with ``w' = 2**32 - 1``.  A trial
counts as "accuracy decreased" when the discrete run's absolute error is
strictly larger than the reference error; ``rate`` is that fraction and
gates the row.  The value hash quantizes one shared uniform draw, so most
disagreements come from rounding of the stored minima alone.
``rounding_adjusted_rate`` additionally discounts the largest shift that
this rounding can cause (see :func:`rounding_slack`) and is informational.
"""
from __future__ import annotations

import json
import math
import statistics
from fractions import Fraction

import numpy as np

from . import _backend
from .adapters import expand_lagged, virtual_key_for
from .estimator import MpuEnsemble, Plan, PlanInput, plan
from .hashing import derive_seed, flow_key, tuple_key
from .ingest import SynthSpec, generate
from .oracle import ExactTracker
from .sketch import MpuParams, MpuSketch

REFERENCE_W = 2 ** 32 - 1
MIN_TRIALS = 30


def binomial_se(p: float, n: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1 - p) / n)


def _mean_sd(values) -> tuple[float, float, float]:
    vals = [float(v) for v in values]
    mean = statistics.fmean(vals)
    var = statistics.variance(vals) if len(vals) > 1 else 0.0
    return mean, var, math.sqrt(var)


def verdict(row: dict) -> bool:
    """PASS/FAIL of a report row, from the row's own numbers."""
    check = row["check"]
    n = row["trials"]
    if check in ("accuracy", "accuracy_abs"):
        return row["failure_rate"] <= row["delta"] + 3 * binomial_se(row["delta"], n)
    if check == "collisions":
        return row["rate"] <= row["bound"] + 4 * binomial_se(row["bound"], n)
    if check == "collision_monotone":
        rates = row["rates"]
        return all(a > b for a, b in zip(rates, rates[1:]))
    if check == "bias_variance":
        return (abs(row["mean"] - row["truth"]) <= 4 * row["sd"] / math.sqrt(n)
                and row["variance"] <= 1.5 * row["variance_bound"])
    if check == "discretization":
        return row["rate"] <= row["bound"] + 3 * binomial_se(row["bound"], n)
    if check == "adapter":
        return abs(row["mean"] - row["truth"]) <= 4 * row["sd"] / math.sqrt(n)
    if check == "null":
        return row["mean"] <= row["threshold"] + 4 * row["sd"] / math.sqrt(n)
    if check == "equivalence":
        return bool(row["identical"])
    raise ValueError(f"unknown check {check!r}")


def _finish(row: dict) -> dict:
    row["passed"] = verdict(row)
    return row


def _check_trials(trials: int) -> None:
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")


def _ensemble_median(q: Plan, seed: int, keys, slots, key_i: int, key_j: int) -> Fraction:
    e = MpuEnsemble(q, seed)
    e.update_many(keys, slots)
    return e.estimate_median(key_i, key_j)


# -- median-of-copies accuracy -------------------------------------------

def accuracy(eps: float = 0.2, delta: float = 0.1, epoch_len: int = 2000, flow_count: int = 100,
             p: int = 3, cors=(50, 300, 1000), trials: int = 300, seed: int = 0, q: float = 0.05) -> list[dict]:
    """Median-of-copies accuracy on synthetic traces with one planted pair each."""
    _check_trials(trials)
    pl = plan(PlanInput(eps, delta, epoch_len, flow_count, p))
    rows = []
    for idx, planted in enumerate(cors):
        scen_seed = derive_seed(seed, idx)
        trace = generate(SynthSpec(flow_count, epoch_len, q, ((0, 1, planted),), scen_seed))
        truth = trace.truth[0][3]
        keys, slots = trace.keys(), trace.slots
        ki, kj = flow_key("f0"), flow_key("f1")
        ests = [_ensemble_median(pl, derive_seed(scen_seed, 1000 + t), keys, slots, ki, kj)
                for t in range(trials)]
        mean, var, sd = _mean_sd(ests)
        err = [abs(float(e) - truth) for e in ests]
        tol = eps * math.sqrt(truth * epoch_len)
        base = {"planted": planted, "truth": truth, "trials": trials, "delta": delta, "eps": eps,
                "epoch_len": epoch_len, "flow_count": flow_count, "p": p, "q": q,
                "plan": pl.as_dict(), "mean": mean, "bias": mean - truth, "variance": var, "sd": sd,
                "variance_bound": truth * epoch_len / pl.s, "seed": seed, "scenario_seed": scen_seed,
                "events": len(trace)}
        rows.append(_finish({"check": "accuracy", **base, "tolerance": tol,
                             "failure_rate": sum(e >= tol for e in err) / trials}))
        rows.append(_finish({"check": "accuracy_abs", **base, "tolerance": eps * epoch_len,
                             "failure_rate": sum(e >= eps * epoch_len for e in err) / trials}))
    return rows


def null_pair(eps: float = 0.2, delta: float = 0.1, epoch_len: int = 2000, flow_count: int = 100,
              p: int = 3, trials: int = 30, seed: int = 0, q: float = 0.05) -> dict:
    """Two flows forced disjoint: the median estimate should stay near 0."""
    _check_trials(trials)
    pl = plan(PlanInput(eps, delta, epoch_len, flow_count, p))
    trace = generate(SynthSpec(flow_count, epoch_len, q, (), seed))
    keep = ~((trace.flows == 1) & np.isin(trace.slots, trace.slots[trace.flows == 0]))
    keys, slots = trace.keys()[keep], trace.slots[keep]
    ests = [_ensemble_median(pl, derive_seed(seed, 1000 + t), keys, slots, flow_key("f0"), flow_key("f1"))
            for t in range(trials)]
    mean, var, sd = _mean_sd(ests)
    return _finish({"check": "null", "truth": 0, "trials": trials, "mean": mean, "variance": var, "sd": sd,
                    "threshold": eps * math.sqrt(epoch_len), "plan": pl.as_dict(), "seed": seed})


# -- row collisions ---------------------------------------------------------

def row_collision(keys: np.ndarray, seed: int, p: int, m: int) -> bool:
    """Whether two of ``keys`` land in the same row in every block."""
    rows = np.stack([_backend.kernels.hash_mod(keys, h.a, h.b, m)
                     for h in MpuSketch(MpuParams(p, m, 1, 1), seed).row_hashes], axis=1)
    return len(np.unique(rows, axis=0)) < len(keys)


def collisions(flow_count: int = 64, p: int = 2, ms=(64, 128, 256), trials: int = 1000, seed: int = 0) -> list[dict]:
    _check_trials(trials)
    keys = np.array([flow_key(f"f{i}") for i in range(flow_count)], dtype=np.uint64)
    rows = []
    for idx, m in enumerate(ms):
        scen_seed = derive_seed(seed, idx)
        hits = sum(row_collision(keys, derive_seed(scen_seed, t), p, m) for t in range(trials))
        rows.append(_finish({"check": "collisions", "flow_count": flow_count, "p": p, "m": m, "trials": trials,
                             "rate": hits / trials, "bound": min(1.0, flow_count ** 2 / (2 * m ** p)),
                             "seed": seed, "scenario_seed": scen_seed}))
    rows.append(_finish({"check": "collision_monotone", "trials": trials, "ms": list(ms),
                         "rates": [r["rate"] for r in rows], "seed": seed}))
    return rows


# -- single-copy bias and variance -----------------------------------------

def bias_variance(s: int = 1024, epoch_len: int = 5000, cor: int = 500, trials: int = 500, p: int = 2,
           m: int = 64, seed: int = 0, q: float = 0.0) -> dict:
    """Single-sketch mean and variance in a regime without row collisions.

    Two flows share ``cor`` planted slots, plus background activity ``q``.
    """
    _check_trials(trials)
    w = -(-5 * epoch_len ** 2 // s)
    params = MpuParams(p, m, s, w)
    trace = generate(SynthSpec(2, epoch_len, q, ((0, 1, cor),), seed))
    truth = trace.truth[0][3]
    keys, slots = trace.keys(), trace.slots
    ki, kj = flow_key("f0"), flow_key("f1")
    ests = []
    for t in range(trials):
        sk = MpuSketch(params, derive_seed(seed, 1000 + t), epoch_len=epoch_len)
        sk.update_many(keys, slots)
        ests.append(sk.estimate(ki, kj).estimate)
    mean, var, sd = _mean_sd(ests)
    return _finish({"check": "bias_variance", "truth": truth, "trials": trials, "s": s, "m": m, "p": p, "w": w,
                    "epoch_len": epoch_len, "q": q, "mean": mean, "bias": mean - truth, "variance": var,
                    "sd": sd, "variance_bound": truth * epoch_len / s,
                    "collision_bound": 2 ** 2 / (2 * m ** p), "seed": seed})


# -- value discretization ---------------------------------------------------

def rounding_slack(sk: MpuSketch, ref: MpuSketch, key_i: int, key_j: int) -> Fraction:
    """Largest estimate shift explained by value rounding alone.

    With identical minimum items, each column's unit-scale minimum differs
    between the runs by less than ``1/w + 1/w'``; the estimate ``a*b/c``
    then moves by at most ``a*b/(c - D) - a*b/c`` with ``D = s (1/w + 1/w')``.
    """
    br = ref.estimate(key_i, key_j)
    if br.b == 0:
        return Fraction(0)
    c_unit = Fraction(br.c, br.w)
    d = sk.params.s * (Fraction(1, sk.params.w) + Fraction(1, ref.params.w))
    if c_unit <= d:
        return Fraction(10 ** 18)
    ab = br.a * br.b
    return ab / (c_unit - d) - ab / c_unit


def discretization(s: int = 256, epoch_len: int = 1024, bounds=(0.5, 0.1, 0.02), trials: int = 500, p: int = 2,
           m: int = 64, seed: int = 0, q: float = 0.25, shared: int = 200,
           reference_w: int = REFERENCE_W) -> list[dict]:
    _check_trials(trials)
    trace = generate(SynthSpec(2, epoch_len, q, ((0, 1, shared),), seed))
    truth = trace.truth[0][3]
    keys, slots = trace.keys(), trace.slots
    ki, kj = flow_key("f0"), flow_key("f1")
    rows = []
    ref_params = MpuParams(p, m, s, reference_w)
    for bound in bounds:
        w = round(epoch_len ** 2 / (2 * s * bound))
        params = MpuParams(p, m, s, w)
        worse = raw = 0
        for t in range(trials):
            tseed = derive_seed(seed, 1000 + t)
            sk = MpuSketch(params, tseed, epoch_len=epoch_len)
            ref = MpuSketch(ref_params, tseed, epoch_len=epoch_len)
            sk.update_many(keys, slots)
            ref.update_many(keys, slots)
            err = abs(sk.estimate(ki, kj).estimate - truth)
            err_ref = abs(ref.estimate(ki, kj).estimate - truth)
            raw += err > err_ref
            worse += err > err_ref + rounding_slack(sk, ref, ki, kj)
        rows.append(_finish({"check": "discretization", "truth": truth, "trials": trials, "s": s, "w": w,
                             "reference_w": reference_w, "epoch_len": epoch_len,
                             "bound": epoch_len ** 2 / (2 * w * s), "target_bound": bound,
                             "rate": raw / trials, "rounding_adjusted_rate": worse / trials, "seed": seed}))
    return rows


# -- adapters ----------------------------------------------------------------

def _spread(rng: np.random.Generator, slots: np.ndarray, parts: int) -> list[np.ndarray]:
    owner = rng.integers(0, parts, size=slots.size)
    return [slots[owner == k] for k in range(parts)]


def group_scenario(seed: int, epoch_len: int = 2000, gcor: int = 150, private: int = 300,
                   noise_flows: int = 40, q: float = 0.05):
    """Groups A (3 flows) and B (2 flows) whose union activities overlap in exactly ``gcor`` slots."""
    rng = np.random.default_rng(derive_seed(seed, 7))
    perm = rng.permutation(epoch_len)
    shared, priv_a, priv_b = perm[:gcor], perm[gcor:gcor + private], perm[gcor + private:gcor + 2 * private]
    events: list[tuple[str, np.ndarray]] = []
    for k, part in enumerate(_spread(rng, np.concatenate([shared, priv_a]), 3)):
        events.append((f"a{k}", part))
    for k, part in enumerate(_spread(rng, np.concatenate([shared, priv_b]), 2)):
        events.append((f"b{k}", part))
    # duplicate some activity inside A so several members fire in one slot
    events.append(("a0", rng.choice(shared, size=gcor // 3, replace=False)))
    for k in range(noise_flows):
        events.append((f"n{k}", np.flatnonzero(rng.random(epoch_len) < q)))
    groups = {"A": ["a0", "a1", "a2"], "B": ["b0", "b1"]}
    tr = ExactTracker(epoch_len)
    for f, sl in events:
        for t in sl.tolist():
            tr.record(f, int(t))
    return events, groups, tr


def tuple_scenario(seed: int, shared: int = 120, private: int = 400, clients: int = 50,
                   epoch_len: int = 1000, noise_services: int = 20, noise_tuples: int = 100):
    """Two services with ``shared`` common (src, slot) tuples and private ones."""
    rng = np.random.default_rng(derive_seed(seed, 8))
    universe = rng.permutation(clients * epoch_len)[:shared + 2 * private]
    def tuples(ix):
        return [(f"10.0.{i // epoch_len}.1", int(i % epoch_len)) for i in ix.tolist()]
    common = tuples(universe[:shared])
    events = {"svc1": common + tuples(universe[shared:shared + private]),
              "svc2": common + tuples(universe[shared + private:])}
    for k in range(noise_services):
        events[f"noise{k}"] = tuples(rng.integers(0, clients * epoch_len, size=noise_tuples))
    tr = ExactTracker(epoch_len)
    for svc, items in events.items():
        for item in items:
            tr.record_typed(svc, item)
    return events, tr


def lag_scenario(seed: int, epoch_len: int = 3000, tau: int = 2, cor: int = 250, j_count: int = 600,
                 private: int = 300, noise_flows: int = 40, q: float = 0.05):
    """Flow ``i`` precedes flow ``j`` by 0..tau slots in exactly ``cor`` places.

    ``j``'s activity is spaced more than ``tau`` apart, so the lagged
    co-activity sum and the distinct-slot view of the virtual group agree.
    """
    rng = np.random.default_rng(derive_seed(seed, 9))
    stride = tau + 1
    grid = np.arange(tau, epoch_len, stride)
    j_slots = np.sort(rng.choice(grid, size=j_count, replace=False))
    hit = rng.choice(j_slots, size=cor, replace=False)
    i_slots = hit - rng.integers(0, tau + 1, size=cor)
    # private i activity far from any j window
    window = np.zeros(epoch_len + tau + 1, dtype=bool)
    for w in range(tau + 1):
        window[np.clip(j_slots - w, 0, None)] = True
    free = np.flatnonzero(~window[:epoch_len])
    i_slots = np.concatenate([i_slots, rng.choice(free, size=min(private, free.size), replace=False)])
    events = [("i", i_slots), ("j", j_slots)]
    for k in range(noise_flows):
        events.append((f"n{k}", np.flatnonzero(rng.random(epoch_len) < q)))
    tr = ExactTracker(epoch_len)
    for f, sl in events:
        for t in sl.tolist():
            tr.record(f, int(t))
    return events, tr


def _adapter_row(name: str, truth: int, ests, trials: int, extra: dict) -> dict:
    mean, var, sd = _mean_sd(ests)
    return _finish({"check": "adapter", "adapter": name, "truth": truth, "trials": trials, "mean": mean,
                    "bias": mean - truth, "variance": var, "sd": sd, **extra})


def adapters(trials: int = 200, seed: int = 0, eps: float = 0.1, delta: float = 0.1, p: int = 3,
             tau: int = 2) -> list[dict]:
    """Group, related-service and lagged estimates against their exact oracles."""
    _check_trials(trials)
    rows = []

    events, groups, tr = group_scenario(derive_seed(seed, 0))
    truth = tr.gcor_any(groups["A"], groups["B"])
    membership = {f: g for g, fs in groups.items() for f in fs}
    keys = np.concatenate([np.full(sl.size, flow_key(membership.get(f, f)), dtype=np.uint64)
                           for f, sl in events])
    slots = np.concatenate([sl for _, sl in events])
    pl = plan(PlanInput(eps, delta, tr.epoch_len, len(groups) + 40, p))
    ests = [_ensemble_median(pl, derive_seed(seed, 1000 + t), keys, slots, flow_key("A"), flow_key("B"))
            for t in range(trials)]
    rows.append(_adapter_row("group", truth, ests, trials, {"plan": pl.as_dict(), "seed": seed}))

    tevents, ttr = tuple_scenario(derive_seed(seed, 1))
    truth = ttr.typed_cor("svc1", "svc2")
    tkeys = np.array([flow_key(svc) for svc, items in tevents.items() for _ in items], dtype=np.uint64)
    titems = np.array([tuple_key(src, t) for items in tevents.values() for src, t in items], dtype=np.uint64)
    universe = len({it for items in tevents.values() for it in items})
    pl_t = plan(PlanInput(eps, delta, universe, len(tevents), p))
    ests = []
    for t in range(trials):
        e = MpuEnsemble(pl_t, derive_seed(seed, 2000 + t))
        e.update_typed_many(tkeys, titems)
        ests.append(e.estimate_median(flow_key("svc1"), flow_key("svc2")))
    rows.append(_adapter_row("related", truth, ests, trials, {"plan": pl_t.as_dict(), "seed": seed}))

    levents, ltr = lag_scenario(derive_seed(seed, 2), tau=tau)
    truth = ltr.cor_tau("i", "j", tau)
    keys = np.concatenate([np.full(sl.size, flow_key(f), dtype=np.uint64) for f, sl in levents])
    slots = np.concatenate([sl for _, sl in levents])
    j_slots = dict(levents)["j"]
    vk = virtual_key_for("j", tau)
    lk, lt = expand_lagged(np.full(j_slots.size, vk, dtype=np.uint64), j_slots, tau)
    keys, slots = np.concatenate([keys, lk]), np.concatenate([slots, lt])
    pl_l = plan(PlanInput(eps, delta, ltr.epoch_len, len(levents) + 1, p))
    ests = [_ensemble_median(pl_l, derive_seed(seed, 3000 + t), keys, slots, flow_key("i"), vk)
            for t in range(trials)]
    rows.append(_adapter_row("lag", truth, ests, trials,
                             {"tau": tau, "lag_union_cor": ltr.lag_union_cor("i", "j", tau),
                              "plan": pl_l.as_dict(), "seed": seed}))
    return rows


# -- report ------------------------------------------------------------------

class BenchReport:
    def __init__(self, rows: list[dict], seed: int, backend: str = _backend.NAME):
        self.rows = rows
        self.seed = seed
        self.backend = backend

    @property
    def passed(self) -> bool:
        return all(verdict(r) for r in self.rows)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "backend": self.backend, "passed": self.passed,
                           "rows": self.rows}, indent=2, default=_json_default)

    def to_tsv(self) -> str:
        cols = ["check", "label", "trials", "truth", "mean", "bias", "variance", "bound", "rate",
                "threshold", "passed"]
        out = ["\t".join(cols)]
        for r in self.rows:
            vals = {**r, "label": _label(r), "bound": _bound(r), "rate": _rate(r), "threshold": _threshold(r)}
            out.append("\t".join(_fmt(vals.get(c, "")) for c in cols))
        return "\n".join(out) + "\n"


def _label(r: dict) -> str:
    c = r["check"]
    if c in ("accuracy", "accuracy_abs"):
        return f"cor={r['planted']}"
    if c == "collisions":
        return f"m={r['m']}"
    if c == "discretization":
        return f"w={r['w']}"
    if c == "adapter":
        return r["adapter"]
    return ""


def _bound(r: dict):
    return r.get("bound", r.get("variance_bound", r.get("delta", "")))


def _rate(r: dict):
    return r.get("failure_rate", r.get("rate", ""))


def _threshold(r: dict):
    c, n = r["check"], r["trials"]
    if c in ("accuracy", "accuracy_abs"):
        return r["delta"] + 3 * binomial_se(r["delta"], n)
    if c == "collisions":
        return r["bound"] + 4 * binomial_se(r["bound"], n)
    if c == "discretization":
        return r["bound"] + 3 * binomial_se(r["bound"], n)
    if c in ("adapter", "bias_variance"):
        return 4 * r["sd"] / math.sqrt(n)
    return r.get("threshold", "")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _json_default(o):
    if isinstance(o, Fraction):
        return float(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(type(o))
