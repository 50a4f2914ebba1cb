"""Command line front end: ``mpusketch synth|track|query|bench|oracle``.

Exit codes: 0 ok, 1 a bench check failed, 2 bad input (trace, ensemble file,
flags, infeasible spec, memory cap), 3 internal or ingestion-target error.
Every command that uses randomness prints ``# seed=<n>`` on stderr.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import bench as benchmod
from .adapters import GroupMap, virtual_key_for
from .errors import MpuError
from .estimator import MpuEnsemble, PlanInput, median, plan
from .hashing import MASK64, flow_key
from .ingest import DEFAULT_ERROR_RATE, SynthSpec, TargetError, TraceReader, generate, stream_into
from .oracle import ExactTracker
from .sketch import DEFAULT_MEMORY_CAP

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(MpuError):
    pass


def u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= MASK64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return v


def positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return v


def _flow_index(tok: str) -> int:
    return int(tok[1:] if tok.startswith("f") else tok)


def planted_pair(text: str) -> tuple[int, int, int]:
    """``i:j:n`` with flow indices (``3`` or ``f3``) and a shared slot count."""
    try:
        i, j, n = text.split(":")
        return _flow_index(i), _flow_index(j), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i:j:n, got {text!r}") from None


def name_pair(text: str) -> tuple[str, str]:
    a, sep, b = text.partition(":")
    if not sep or not a or not b or ":" in b:
        raise argparse.ArgumentTypeError(f"expected name_i:name_j, got {text!r}")
    return a, b


def fmt6(x: Fraction) -> str:
    """Exact round-half-even to 6 decimals, no float in between."""
    n = round(Fraction(x) * 10 ** 6)
    sign = "-" if n < 0 else ""
    q, r = divmod(abs(n), 10 ** 6)
    return f"{sign}{q}.{r:06d}"


def _seed_line(seed: int) -> None:
    print(f"# seed={seed}", file=sys.stderr)


@contextlib.contextmanager
def _text_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fp:
            yield fp


@contextlib.contextmanager
def _text_out(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            yield fp


def _load_pairs(args) -> list[tuple[str, str]]:
    pairs = list(args.pair or [])
    if args.pairs_from:
        with _text_in(args.pairs_from) as fp:
            for n, line in enumerate(fp):
                cols = line.rstrip("\n").split("\t")
                if n == 0 and cols[:2] == ["flow_i", "flow_j"]:
                    continue
                if len(cols) >= 2 and cols[0] and cols[1]:
                    pairs.append((cols[0], cols[1]))
    if not pairs:
        raise UsageError("no pairs given (use --pair or --pairs-from)")
    return pairs


def _adapter_mode(args) -> str:
    chosen = [m for m, on in (("group", args.groups is not None), ("related", args.related),
                              ("lag", args.tau is not None)) if on]
    if len(chosen) > 1:
        raise UsageError(f"adapter flags {', '.join(chosen)} cannot be combined")
    return chosen[0] if chosen else "flow"


def _group_map(args) -> GroupMap | None:
    if not args.groups:
        return None
    with open(args.groups, encoding="utf-8") as fp:
        return GroupMap.from_ndjson(fp)


def _reader(lines, args) -> TraceReader:
    return TraceReader(lines, args.epoch, max_error_rate=args.max_error_rate)


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.epoch is None:
        raise UsageError("--epoch is required")
    spec = SynthSpec(args.flows, args.epoch, args.q, tuple(args.pair or ()), args.seed)
    trace = generate(spec)
    _seed_line(args.seed)
    with _text_out(args.out) as fp:
        trace.write(fp)
    truth_path = args.truth or (f"{args.out}.truth.tsv" if args.out and args.out != "-" else None)
    if truth_path:
        Path(truth_path).write_text(trace.truth_tsv(), encoding="utf-8")
    else:
        sys.stderr.write(trace.truth_tsv())
    if args.json:
        print(json.dumps({"seed": args.seed, "events": len(trace), "trace": args.out,
                          "truth": truth_path, "pairs": [list(t) for t in trace.truth]}),
              file=sys.stderr)
    return EXIT_OK


# -- track -------------------------------------------------------------------

def _first_pass(lines, args, mode: str, gm: GroupMap | None) -> tuple[int, int]:
    """Distinct sketch keys and distinct (src, slot) items in the trace."""
    keys, items = set(), set()
    reader = _reader(lines, args)
    for r in reader:
        if mode == "related":
            keys.add(r.flow_id)
            items.add((r.src_key, r.slot))
        elif mode == "group":
            keys.add(gm.group_of(r.flow_id) if gm and gm.assignment else (r.group_id or r.flow_id))
        else:
            keys.add(r.flow_id)
            if mode == "lag":
                keys.add(("lag", r.flow_id))
    reader.finish()
    return len(keys), len(items)


def cmd_track(args) -> int:
    if not args.out or args.out == "-":
        raise UsageError("--out (ensemble file path) is required")
    mode = _adapter_mode(args)
    gm = _group_map(args)
    if args.trace == "-":
        lines = sys.stdin.readlines()
        reopen = lambda: contextlib.nullcontext(lines)  # noqa: E731
    else:
        reopen = lambda: _text_in(args.trace)  # noqa: E731
    flows, universe = args.flows, args.universe
    if flows is None or (mode == "related" and universe is None):
        with reopen() as fp:
            counted_flows, counted_items = _first_pass(fp, args, mode, gm)
        flows = flows or max(1, counted_flows)
        universe = universe or max(1, counted_items)
    with reopen() as fp:
        reader = _reader(fp, args)
        epoch = reader.cfg.epoch_len
        plan_len = universe if mode == "related" else epoch
        pl = plan(PlanInput(args.eps, args.delta, plan_len, flows, args.p), memory_cap=args.memory_cap)
        _seed_line(args.seed)
        ens = MpuEnsemble(pl, args.seed, memory_cap=args.memory_cap)
        report = stream_into(reader, ens, mode, group_map=gm, tau=args.tau or 0)
        reader.finish()
    with open(args.out, "wb") as fp:
        ens.save(fp)
    print(json.dumps({"seed": args.seed, "plan": pl.as_dict(), "bytes": ens.nbytes, "out": args.out,
                      "epoch_len": epoch, "ingest": report.as_dict()}, indent=None if args.json else 2))
    return EXIT_OK


# -- query -------------------------------------------------------------------

QUERY_COLUMNS = ("key_i", "key_j", "estimate_num", "estimate_den", "estimate",
                 "copy_min", "copy_median", "copy_max", "a_sum", "b_sum", "c_sum")


def query_rows(ens: MpuEnsemble, pairs, tau: int | None = None, strict: bool = False) -> list[dict]:
    rows = []
    for a, b in pairs:
        ki = flow_key(a)
        kj = virtual_key_for(b, tau) if tau is not None else flow_key(b)
        parts = ens.estimates(ki, kj, strict)
        ests = [p.estimate for p in parts]
        est = median(ests)
        rows.append({"key_i": a, "key_j": b if tau is None else f"{b}@tau={tau}",
                     "estimate": est, "copy_min": min(ests), "copy_median": est, "copy_max": max(ests),
                     "a_sum": sum(p.a for p in parts), "b_sum": sum(p.b for p in parts),
                     "c_sum": sum(p.c for p in parts)})
    return rows


def cmd_query(args) -> int:
    if args.groups and args.related:
        raise UsageError("--groups and --related cannot be combined")
    if args.tau is not None and (args.groups or args.related):
        raise UsageError("--tau applies to plain flows only")
    pairs = _load_pairs(args)
    with open(args.ensemble, "rb") as fp:
        ens = MpuEnsemble.load(fp, memory_cap=args.memory_cap)
    _seed_line(ens.master_seed)
    rows = query_rows(ens, pairs, args.tau, args.strict)
    with _text_out(args.out) as out:
        if args.json:
            out.write(json.dumps([{**r, "estimate_num": r["estimate"].numerator,
                                   "estimate_den": r["estimate"].denominator,
                                   **{k: fmt6(r[k]) for k in ("estimate", "copy_min", "copy_median", "copy_max")}}
                                  for r in rows], indent=2) + "\n")
        else:
            out.write("\t".join(QUERY_COLUMNS) + "\n")
            for r in rows:
                vals = [r["key_i"], r["key_j"], r["estimate"].numerator, r["estimate"].denominator,
                        fmt6(r["estimate"]), fmt6(r["copy_min"]), fmt6(r["copy_median"]),
                        fmt6(r["copy_max"]), r["a_sum"], r["b_sum"], r["c_sum"]]
                out.write("\t".join(map(str, vals)) + "\n")
    return EXIT_OK


# -- bench -------------------------------------------------------------------

SCENARIOS = ("accuracy", "null", "collisions", "bias_variance", "discretization", "adapters")


def run_bench(args) -> benchmod.BenchReport:
    seed, rows = args.seed, []
    t = {} if args.trials is None else {"trials": args.trials}
    for name in args.scenarios:
        if name == "accuracy":
            rows += benchmod.accuracy(args.eps, args.delta, args.epoch or 2000, args.flows, args.p,
                                      tuple(args.cors), seed=seed, **t)
        elif name == "null":
            rows.append(benchmod.null_pair(args.eps, args.delta, args.epoch or 2000, args.flows, args.p,
                                           seed=seed, **t))
        elif name == "collisions":
            rows += benchmod.collisions(seed=seed, **t)
        elif name == "bias_variance":
            rows.append(benchmod.bias_variance(seed=seed, **t))
        elif name == "discretization":
            rows += benchmod.discretization(seed=seed, **t)
        elif name == "adapters":
            rows += benchmod.adapters(seed=seed, **t)
    return benchmod.BenchReport(rows, seed)


def cmd_bench(args) -> int:
    if args.trials is not None and args.trials < benchmod.MIN_TRIALS:
        raise UsageError(f"--trials must be >= {benchmod.MIN_TRIALS}")
    _seed_line(args.seed)
    report = run_bench(args)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_tsv())
    return EXIT_OK if report.passed else EXIT_FAIL


# -- oracle ------------------------------------------------------------------

def cmd_oracle(args) -> int:
    mode = _adapter_mode(args)
    gm = _group_map(args)
    pairs = _load_pairs(args)
    with _text_in(args.trace) as fp:
        reader = _reader(fp, args)
        tracker = ExactTracker(reader.cfg.epoch_len)
        stream_into(reader, tracker, "flow" if mode == "lag" else mode, group_map=gm)
        reader.finish()
    kind = {"flow": "cor", "group": "gcor_any", "related": "tuple_cor", "lag": f"cor_tau{args.tau}"}[mode]
    with _text_out(args.out) as out:
        rows = []
        for a, b in pairs:
            if mode == "lag":
                v = tracker.cor_tau(a, b, args.tau)
            elif mode == "related":
                v = tracker.typed_cor(a, b)
            else:
                v = tracker.cor(a, b)
            rows.append({"flow_i": a, "flow_j": b, "kind": kind, "value": v})
        if args.json:
            out.write(json.dumps(rows, indent=2) + "\n")
        else:
            out.write("flow_i\tflow_j\tkind\tvalue\n")
            out.writelines(f"{r['flow_i']}\t{r['flow_j']}\t{r['kind']}\t{r['value']}\n" for r in rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=u64, default=0, help="master seed (unsigned 64-bit)")
    common.add_argument("--epoch", type=positive, help="epoch length |T| in slots")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--json", action="store_true", help="JSON instead of TSV / text")

    trace_opts = argparse.ArgumentParser(add_help=False)
    trace_opts.add_argument("--max-error-rate", type=float, default=DEFAULT_ERROR_RATE,
                            help="abort when more than this fraction of lines is malformed")

    adapter_opts = argparse.ArgumentParser(add_help=False)
    adapter_opts.add_argument("--groups", nargs="?", const="", metavar="MAP",
                              help="group mode; MAP is NDJSON {flow, group}, else the trace's group column")
    adapter_opts.add_argument("--related", action="store_true",
                              help="related-service mode: items are (src, slot) tuples")
    adapter_opts.add_argument("--tau", type=int, help="lag bound in slots")

    pair_opts = argparse.ArgumentParser(add_help=False)
    pair_opts.add_argument("--pair", type=name_pair, action="append", metavar="I:J",
                           help="pair of flow (or group / service) names, repeatable")
    pair_opts.add_argument("--pairs-from", metavar="TSV",
                           help="take pairs from the first two columns of a TSV (e.g. a synth truth table)")

    ap = argparse.ArgumentParser(prog="mpusketch", description="Flow co-activity sketches")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trace with planted pairs")
    p.add_argument("--flows", type=positive, required=True)
    p.add_argument("--q", type=float, default=0.0, help="background activity probability")
    p.add_argument("--pair", type=planted_pair, action="append", metavar="I:J:N",
                   help="plant N shared slots between flows I and J")
    p.add_argument("--truth", help="truth table path (default OUT.truth.tsv, or stderr)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", parents=[common, trace_opts, adapter_opts], help="sketch a trace")
    p.add_argument("trace", help="trace file or -")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--p", type=positive, default=3, help="row blocks per sketch")
    p.add_argument("--flows", type=positive, help="|F| for the planner (default: distinct count)")
    p.add_argument("--universe", type=positive, help="item universe for --related (default: distinct tuples)")
    p.add_argument("--memory-cap", type=positive, default=DEFAULT_MEMORY_CAP)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("query", parents=[common, pair_opts], help="estimate pairs from an ensemble file")
    p.add_argument("ensemble")
    p.add_argument("--groups", action="store_true", help="names are group ids")
    p.add_argument("--related", action="store_true", help="names are service ids")
    p.add_argument("--tau", type=int, help="J is the lag-tau virtual group of flow J")
    p.add_argument("--strict", action="store_true", help="count a column as equal only when it is occupied")
    p.add_argument("--memory-cap", type=positive, default=DEFAULT_MEMORY_CAP)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", parents=[common], help="Monte-Carlo checks of the accuracy bounds")
    p.add_argument("--trials", type=int, help="trials per scenario (default: each scenario's own)")
    p.add_argument("--eps", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--flows", type=positive, default=100)
    p.add_argument("--p", type=positive, default=3)
    p.add_argument("--cors", type=int, nargs="+", default=[50, 300, 1000])
    p.add_argument("--scenarios", nargs="+", choices=SCENARIOS, default=list(SCENARIOS))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", parents=[common, trace_opts, adapter_opts, pair_opts],
                       help="exact correlations of a trace")
    p.add_argument("trace", help="trace file or -")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "tau", None) is not None and args.tau < 0:
        ap.error("--tau must be >= 0")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mpusketch {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TargetError as exc:
        print(f"mpusketch {args.command}: ingestion failed at {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (MpuError, OSError, ValueError) as exc:
        print(f"mpusketch {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"mpusketch {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
