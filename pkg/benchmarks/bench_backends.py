"""Compare update throughput of the compiled kernels and the numpy fallback.

    python3 benchmarks/bench_backends.py --events 10000000 --p 4

Both backends ingest the same pre-digested (key, slot) arrays into one
sketch copy; the resulting counters must be bit-identical.  A third row
times the full text path (parse a trace, digest ids, update) with the
active backend, for context.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
import time

import numpy as np

from mpusketch import _backend, _fallback
from mpusketch.estimator import PlanInput, plan
from mpusketch.hashing import flow_key
from mpusketch.ingest import TraceReader, stream_into
from mpusketch.sketch import MpuSketch


def workload(events: int, flows: int, epoch: int, seed: int):
    rng = np.random.default_rng(seed)
    pool = np.array([flow_key(f"f{i}") for i in range(flows)], dtype=np.uint64)
    keys = pool[rng.integers(0, flows, events)]
    slots = np.sort(rng.integers(0, epoch, events)).astype(np.uint64)
    return keys, slots


def time_updates(params, keys, slots, epoch, kernels, repeat: int) -> tuple[float, MpuSketch]:
    best, sk = float("inf"), None
    for _ in range(repeat):
        sk = MpuSketch(params, 1, epoch_len=epoch)
        t0 = time.perf_counter()
        sk.update_many(keys, slots, kernels=kernels)
        best = min(best, time.perf_counter() - t0)
    return keys.size / best, sk


def time_text_path(params, keys, slots, epoch, limit: int) -> float:
    names = {int(k): f"f{i}" for i, k in enumerate(np.unique(keys))}
    lines = [f"#mpu-trace v1 mode=slot epoch={epoch}\n"]
    lines += [f"{t},{names[int(k)]}\n" for k, t in zip(keys[:limit].tolist(), slots[:limit].tolist())]
    sk = MpuSketch(params, 1, epoch_len=epoch)
    report = stream_into(TraceReader(io.StringIO("".join(lines))), sk)
    return report.events_per_sec


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=10_000_000)
    ap.add_argument("--fallback-events", type=int, default=2_000_000,
                    help="events for the slower numpy run (rate is per event)")
    ap.add_argument("--text-events", type=int, default=500_000)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--flows", type=int, default=10_000)
    ap.add_argument("--epoch", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    params = plan(PlanInput(0.1, 0.1, args.epoch, args.flows, args.p)).params
    keys, slots = workload(args.events, args.flows, args.epoch, args.seed)
    rows = []
    ref = None
    if _backend.compiled():
        rate, ref = time_updates(params, keys, slots, args.epoch, _backend.kernels, args.repeat)
        rows.append({"backend": "compiled", "events": args.events, "updates_per_sec": rate})
    n = min(args.fallback_events, args.events)
    rate, fb = time_updates(params, keys[:n], slots[:n], args.epoch, _fallback, 1)
    rows.append({"backend": "python", "events": n, "updates_per_sec": rate})
    if ref is not None:
        check = MpuSketch(params, 1, epoch_len=args.epoch)
        check.update_many(keys[:n], slots[:n], kernels=_backend.kernels)
        rows[-1]["identical_to_compiled"] = check == fb
    rows.append({"backend": f"{_backend.NAME}+text", "events": min(args.text_events, args.events),
                 "updates_per_sec": time_text_path(params, keys, slots, args.epoch, args.text_events)})
    if len(rows) > 2:
        rows[0]["speedup_vs_python"] = rows[0]["updates_per_sec"] / rows[1]["updates_per_sec"]

    if args.json:
        print(json.dumps({"p": args.p, "params": params.__dict__, "rows": rows}, indent=2))
    else:
        print(f"p={params.p} m={params.m} s={params.s} w={params.w} ({params.width}-bit counters)")
        print(f"{'backend':<16}{'events':>12}{'updates/s':>16}")
        for r in rows:
            extra = "".join(f"  {k}={v:.1f}" if isinstance(v, float) else f"  {k}={v}"
                            for k, v in r.items() if k not in ("backend", "events", "updates_per_sec"))
            print(f"{r['backend']:<16}{r['events']:>12,}{r['updates_per_sec']:>16,.0f}{extra}")
    return 0 if all(r.get("identical_to_compiled", True) for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
