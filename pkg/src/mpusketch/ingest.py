"""Trace files, slotting, the synthetic generator and one-pass ingestion.

Trace format (text, one event per line)::

    #mpu-trace v1 mode=slot epoch=4000
    17,f3
    17,f9,web
    18,f3,,10.0.0.7

The header declares ``mode=slot`` (first column is a slot index) or
``mode=ts`` (first column is an integer timestamp, mapped to
``floor((ts - epoch_start) / slot_width)``).  Optional header tokens
``epoch``, ``slot_width`` and ``epoch_start`` supply the defaults for
:class:`SlotConfig`.  Columns after the flow id are an optional group id and
an optional source key; an empty field means "absent".
"""
from __future__ import annotations

import itertools
import time
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, TextIO

import numpy as np

from . import _backend
from .adapters import GroupMap, expand_lagged
from .errors import InfeasibleSpecError, MpuError, TraceFormatError
from .estimator import MpuEnsemble
from .hashing import derive_seed, flow_key, lag_key, tuple_key
from .oracle import ExactTracker
from .sketch import MpuSketch

HEADER_PREFIX = "#mpu-trace"
DEFAULT_ERROR_RATE = 0.05
MODES = ("flow", "group", "related", "lag")


class TraceRecord(NamedTuple):
    slot: int
    flow_id: str
    group_id: str | None
    src_key: str | None
    line_no: int


@dataclass(frozen=True)
class SlotConfig:
    epoch_len: int
    slot_width: int = 1
    epoch_start: int = 0

    def __post_init__(self):
        if self.slot_width < 1:
            raise ValueError(f"slot_width must be >= 1, got {self.slot_width}")
        if self.epoch_len < 1:
            raise ValueError(f"epoch_len must be >= 1, got {self.epoch_len}")

    def slot_of(self, ts: int) -> int:
        return (ts - self.epoch_start) // self.slot_width


@dataclass(frozen=True)
class TraceHeader:
    mode: str
    epoch_len: int | None = None
    slot_width: int = 1
    epoch_start: int = 0

    def line(self) -> str:
        parts = [HEADER_PREFIX, "v1", f"mode={self.mode}"]
        if self.epoch_len is not None:
            parts.append(f"epoch={self.epoch_len}")
        if self.mode == "ts":
            parts += [f"slot_width={self.slot_width}", f"epoch_start={self.epoch_start}"]
        return " ".join(parts)


def parse_header(line: str) -> TraceHeader:
    tokens = line.split()
    if len(tokens) < 3 or tokens[0] != HEADER_PREFIX:
        raise TraceFormatError(f"missing '{HEADER_PREFIX}' header")
    if tokens[1] != "v1":
        raise TraceFormatError(f"unsupported trace version {tokens[1]!r}")
    fields = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise TraceFormatError(f"bad header token {tok!r}")
        fields[key] = value
    mode = fields.pop("mode", None)
    if mode not in ("slot", "ts"):
        raise TraceFormatError(f"header mode must be slot or ts, got {mode!r}")
    try:
        ints = {k: int(v) for k, v in fields.items() if k in ("epoch", "slot_width", "epoch_start")}
    except ValueError as exc:
        raise TraceFormatError(f"bad header value: {exc}") from None
    return TraceHeader(mode, ints.get("epoch"), ints.get("slot_width", 1), ints.get("epoch_start", 0))


@dataclass
class ParseStats:
    lines: int = 0
    parsed: int = 0
    skipped: int = 0
    errors: int = 0
    error_lines: list[int] = field(default_factory=list)

    @property
    def error_rate(self) -> float:
        return self.errors / self.lines if self.lines else 0.0


class TraceReader:
    """Iterate :class:`TraceRecord` values from a trace, tallying bad lines.

    ``epoch_len`` (and the ts-mode slotting fields) default to the header;
    explicit arguments win.  After iteration, :meth:`finish` raises
    ``TraceFormatError`` if the malformed-line rate exceeds
    ``max_error_rate``.
    """

    MAX_KEPT_ERRORS = 100

    def __init__(self, lines: Iterable[str], epoch_len: int | None = None, *,
                 slot_width: int | None = None, epoch_start: int | None = None,
                 max_error_rate: float = DEFAULT_ERROR_RATE):
        self._lines = iter(lines)
        try:
            first = next(self._lines)
        except StopIteration:
            raise TraceFormatError("empty trace: missing header") from None
        self.header = parse_header(first)
        epoch = epoch_len if epoch_len is not None else self.header.epoch_len
        if epoch is None:
            raise TraceFormatError("epoch length not given by header or caller")
        self.cfg = SlotConfig(
            epoch,
            slot_width if slot_width is not None else self.header.slot_width,
            epoch_start if epoch_start is not None else self.header.epoch_start,
        )
        self.max_error_rate = max_error_rate
        self.stats = ParseStats()

    def _error(self, line_no: int) -> None:
        self.stats.errors += 1
        if len(self.stats.error_lines) < self.MAX_KEPT_ERRORS:
            self.stats.error_lines.append(line_no)

    def __iter__(self) -> Iterator[TraceRecord]:
        ts_mode = self.header.mode == "ts"
        cfg = self.cfg
        stats = self.stats
        for line_no, line in enumerate(self._lines, 2):
            line = line.strip()
            if not line or line[0] == "#":
                continue
            stats.lines += 1
            parts = line.split(",")
            if not 2 <= len(parts) <= 4 or not parts[1]:
                self._error(line_no)
                continue
            try:
                value = int(parts[0])
            except ValueError:
                self._error(line_no)
                continue
            slot = cfg.slot_of(value) if ts_mode else value
            if not 0 <= slot < cfg.epoch_len:
                stats.skipped += 1
                continue
            group = parts[2] or None if len(parts) > 2 else None
            src = parts[3] or None if len(parts) > 3 else None
            stats.parsed += 1
            yield TraceRecord(slot, parts[1], group, src, line_no)

    def finish(self) -> ParseStats:
        if self.stats.error_rate > self.max_error_rate:
            raise TraceFormatError(
                f"{self.stats.errors} of {self.stats.lines} lines malformed "
                f"({self.stats.error_rate:.2%} > {self.max_error_rate:.2%})")
        return self.stats


def parse(lines: Iterable[str], cfg: SlotConfig | None = None, **kwargs) -> TraceReader:
    if cfg is not None:
        kwargs.setdefault("epoch_len", cfg.epoch_len)
        kwargs.setdefault("slot_width", cfg.slot_width)
        kwargs.setdefault("epoch_start", cfg.epoch_start)
    return TraceReader(lines, **kwargs)


# -- ingestion ---------------------------------------------------------------

_flow_key = lru_cache(maxsize=1 << 16)(flow_key)
_lag_key = lru_cache(maxsize=1 << 16)(lag_key)


class TargetError(MpuError):
    def __init__(self, line_no: int, cause: Exception):
        super().__init__(f"line {line_no}: {cause}")
        self.line_no = line_no
        self.cause = cause


@dataclass
class IngestReport:
    events: int = 0
    skipped: int = 0
    errors: int = 0
    error_lines: list[int] = field(default_factory=list)
    wall_time_s: float = 0.0
    mode: str = "flow"
    backend: str = _backend.NAME

    @property
    def events_per_sec(self) -> float:
        return self.events / self.wall_time_s if self.wall_time_s > 0 else 0.0

    def as_dict(self) -> dict:
        return {"events": self.events, "skipped": self.skipped, "errors": self.errors,
                "error_lines": self.error_lines, "wall_time_s": self.wall_time_s,
                "events_per_sec": self.events_per_sec, "mode": self.mode, "backend": self.backend}


def _apply_sketch(target, mode: str, batch: list[TraceRecord], gm: GroupMap | None, tau: int) -> None:
    slots = np.fromiter((r.slot for r in batch), dtype=np.int64, count=len(batch))
    if mode == "related":
        for r in batch:
            if r.src_key is None:
                raise TargetError(r.line_no, ValueError("related mode needs a src_key column"))
        keys = np.fromiter((_flow_key(r.flow_id) for r in batch), dtype=np.uint64, count=len(batch))
        items = np.fromiter((tuple_key(r.src_key, r.slot) for r in batch), dtype=np.uint64, count=len(batch))
        target.update_typed_many(keys, items)
        return
    if mode == "group":
        gm = gm or GroupMap()
        ids = [gm.group_of(r.flow_id) if gm.assignment or r.group_id is None else r.group_id
               for r in batch]
    else:
        ids = [r.flow_id for r in batch]
    keys = np.fromiter((_flow_key(f) for f in ids), dtype=np.uint64, count=len(batch))
    target.update_many(keys, slots)
    if mode == "lag":
        vkeys = np.fromiter((_lag_key(f, tau) for f in ids), dtype=np.uint64, count=len(batch))
        lk, lt = expand_lagged(vkeys, slots, tau)
        target.update_many(lk, lt)


def _apply_oracle(target: ExactTracker, mode: str, batch: list[TraceRecord], gm: GroupMap | None) -> None:
    for r in batch:
        if mode == "related":
            if r.src_key is None:
                raise TargetError(r.line_no, ValueError("related mode needs a src_key column"))
            target.record_typed(r.flow_id, (r.src_key, r.slot))
        elif mode == "group":
            g = gm.group_of(r.flow_id) if gm and gm.assignment else (r.group_id or r.flow_id)
            target.record(g, r.slot)
        else:
            target.record(r.flow_id, r.slot)


def stream_into(records: Iterable[TraceRecord], target, mode: str = "flow", *,
                group_map: GroupMap | None = None, tau: int = 0, batch_size: int = 1 << 15) -> IngestReport:
    """Single pass of ``records`` into an ensemble, sketch or exact tracker.

    Records are consumed in fixed-size batches, so memory beyond the target
    is bounded by ``batch_size`` regardless of trace length.
    """
    if mode not in MODES:
        raise ValueError(f"unknown adapter mode {mode!r}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    report = IngestReport(mode=mode)
    start = time.perf_counter()
    it = iter(records)
    oracle = isinstance(target, ExactTracker)
    if not oracle and not isinstance(target, (MpuEnsemble, MpuSketch)):
        raise TypeError(f"unsupported target {type(target).__name__}")
    while True:
        batch = list(itertools.islice(it, batch_size))
        if not batch:
            break
        try:
            if oracle:
                _apply_oracle(target, mode, batch, group_map)
            else:
                _apply_sketch(target, mode, batch, group_map, tau)
        except TargetError:
            raise
        except (MpuError, ValueError, KeyError) as exc:
            raise TargetError(batch[0].line_no, exc) from exc
        report.events += len(batch)
    report.wall_time_s = time.perf_counter() - start
    stats = getattr(records, "stats", None)
    if stats is not None:
        report.skipped = stats.skipped
        report.errors = stats.errors
        report.error_lines = list(stats.error_lines)
    return report


# -- synthetic traces --------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Synthetic trace: ``flow_count`` flows named ``f0..f{n-1}``.

    Each (flow, slot) cell is active independently with probability ``q``;
    every planted ``(i, j, shared)`` additionally forces ``shared`` common
    slots active in both flows.
    """

    flow_count: int
    epoch_len: int
    q: float = 0.0
    pairs: tuple[tuple[int, int, int], ...] = ()
    seed: int = 0

    def validate(self) -> None:
        if self.flow_count < 1 or self.epoch_len < 1:
            raise InfeasibleSpecError("flow_count and epoch_len must be >= 1")
        if not 0.0 <= self.q <= 1.0:
            raise InfeasibleSpecError(f"q must be in [0, 1], got {self.q}")
        for i, j, shared in self.pairs:
            if not (0 <= i < self.flow_count and 0 <= j < self.flow_count) or i == j:
                raise InfeasibleSpecError(f"pair ({i}, {j}) does not name two distinct flows")
            if not 0 <= shared <= self.epoch_len:
                raise InfeasibleSpecError(
                    f"pair ({i}, {j}) shares {shared} slots but the epoch has {self.epoch_len}")


def flow_name(index: int) -> str:
    return f"f{index}"


def bernoulli_threshold(q: float) -> int:
    """Active iff ``u >> 11 < threshold`` for a splitmix64 output ``u``."""
    return int(q * (1 << 53))


def planted_slots(seed: int, pair_index: int, epoch_len: int, shared: int) -> np.ndarray:
    """The ``shared`` slots ranked lowest by the pair's splitmix64 stream."""
    ranks = _backend.kernels.splitmix_block(derive_seed(seed, pair_index + 1), 0, epoch_len)
    return np.sort(np.argsort(ranks, kind="stable")[:shared])


@dataclass
class SynthTrace:
    spec: SynthSpec
    slots: np.ndarray
    flows: np.ndarray
    truth: list[tuple[str, str, int, int]]

    def __len__(self) -> int:
        return len(self.slots)

    @property
    def names(self) -> list[str]:
        return [flow_name(i) for i in range(self.spec.flow_count)]

    def keys(self) -> np.ndarray:
        digests = np.array([flow_key(n) for n in self.names], dtype=np.uint64)
        return digests[self.flows]

    def header(self) -> TraceHeader:
        return TraceHeader("slot", self.spec.epoch_len)

    def lines(self) -> Iterator[str]:
        yield self.header().line() + "\n"
        names = self.names
        for t, f in zip(self.slots.tolist(), self.flows.tolist()):
            yield f"{t},{names[f]}\n"

    def write(self, fp: TextIO) -> None:
        fp.writelines(self.lines())

    def truth_tsv(self) -> str:
        rows = ["flow_i\tflow_j\tplanted\tcor\n"]
        rows += [f"{a}\t{b}\t{planted}\t{cor}\n" for a, b, planted, cor in self.truth]
        return "".join(rows)

    def tracker(self, flows: Iterable[int] | None = None) -> ExactTracker:
        tr = ExactTracker(self.spec.epoch_len)
        wanted = None if flows is None else set(flows)
        names = self.names
        for t, f in zip(self.slots.tolist(), self.flows.tolist()):
            if wanted is None or f in wanted:
                tr.record(names[f], t)
        return tr


def generate(spec: SynthSpec) -> SynthTrace:
    """Deterministic synthetic trace with exact ground truth for planted pairs.

    Cell ``(f, t)`` draws splitmix64 output number ``f * epoch_len + t`` of the
    stream seeded ``derive_seed(seed, 0)``.  Pair ``k`` ranks slots with the
    stream seeded ``derive_seed(seed, k + 1)``.  Events are emitted sorted by
    slot, then flow index.
    """
    spec.validate()
    T = spec.epoch_len
    bg_seed = derive_seed(spec.seed, 0)
    threshold = np.uint64(bernoulli_threshold(spec.q))
    forced: dict[int, list[np.ndarray]] = {}
    for k, (i, j, shared) in enumerate(spec.pairs):
        chosen = planted_slots(spec.seed, k, T, shared)
        forced.setdefault(i, []).append(chosen)
        forced.setdefault(j, []).append(chosen)
    slot_parts, flow_parts = [], []
    for f in range(spec.flow_count):
        if spec.q > 0:
            u = _backend.kernels.splitmix_block(bg_seed, f * T, T)
            active = (u >> np.uint64(11)) < threshold
        else:
            active = np.zeros(T, dtype=bool)
        for chosen in forced.get(f, ()):
            active[chosen] = True
        idx = np.flatnonzero(active)
        slot_parts.append(idx)
        flow_parts.append(np.full(idx.size, f, dtype=np.int64))
    slots = np.concatenate(slot_parts) if slot_parts else np.empty(0, dtype=np.int64)
    flows = np.concatenate(flow_parts) if flow_parts else np.empty(0, dtype=np.int64)
    order = np.lexsort((flows, slots))
    trace = SynthTrace(spec, slots[order].astype(np.int64), flows[order], [])
    involved = {f for i, j, _ in spec.pairs for f in (i, j)}
    tracker = trace.tracker(involved)
    trace.truth = [(flow_name(i), flow_name(j), shared, tracker.cor(flow_name(i), flow_name(j)))
                   for i, j, shared in spec.pairs]
    return trace
