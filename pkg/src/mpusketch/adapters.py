"""Reduce group, tuple-type and lagged correlations to plain sketch updates.

* groups: feed the group identifier instead of the flow identifier; two
  member flows active in one slot collapse into a single (idempotent) update,
  which is exactly the "any member active" indicator.
* related services: the item type becomes the ``(src_key, slot)`` tuple.
* lag: a virtual group ``G`` for target flow ``j`` is active at ``t - w`` for
  each ``0 <= w <= tau`` whenever ``j`` is active at ``t``; slots that would
  fall before the epoch start are skipped.  Estimating ``(i, G)`` then tracks
  the lagged co-activity of ``i`` followed by ``j``.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .errors import MpuError
from .estimator import MpuEnsemble
from .hashing import flow_key, lag_key, tuple_key


class UnmappedFlowError(MpuError, KeyError):
    pass


@dataclass
class GroupMap:
    """Many-to-one flow -> group assignment.

    Unmapped flows pass through as their own singleton group unless
    ``strict`` is set, in which case they raise ``UnmappedFlowError``.
    """

    assignment: dict[str, str] = field(default_factory=dict)
    strict: bool = False

    def group_of(self, flow_id: str) -> str:
        try:
            return self.assignment[flow_id]
        except KeyError:
            if self.strict:
                raise UnmappedFlowError(flow_id) from None
            return flow_id

    def members(self, group_id: str) -> list[str]:
        return sorted(f for f, g in self.assignment.items() if g == group_id)

    @classmethod
    def from_ndjson(cls, lines: Iterable[str], strict: bool = False) -> GroupMap:
        assignment = {}
        for n, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                flow, group = rec["flow"], rec["group"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"group map line {n}: {exc}") from None
            if not isinstance(flow, str) or not isinstance(group, str) or not flow:
                raise ValueError(f"group map line {n}: flow and group must be strings")
            assignment[flow] = group
        return cls(assignment, strict)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[str]], strict: bool = False) -> GroupMap:
        """Build from ``{group: [flows...]}``."""
        return cls({f: g for g, flows in mapping.items() for f in flows}, strict)

    def to_ndjson(self) -> str:
        return "".join(json.dumps({"flow": f, "group": g}) + "\n"
                       for f, g in sorted(self.assignment.items()))


@dataclass(frozen=True)
class LagConfig:
    tau: int
    target: str

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")

    @property
    def virtual_key(self) -> int:
        return virtual_key_for(self.target, self.tau)


def virtual_key_for(flow_id: str, tau: int) -> int:
    return lag_key(flow_id, tau)


def lagged_slots(slot: int, tau: int) -> list[int]:
    return [slot - w for w in range(tau + 1) if slot - w >= 0]


def expand_lagged(keys, slots, tau: int) -> tuple[np.ndarray, np.ndarray]:
    """Vector form of the lag expansion: every ``(key, t)`` becomes ``(key, t - w)``."""
    keys = np.asarray(keys, dtype=np.uint64)
    slots = np.asarray(slots, dtype=np.int64)
    ks, ts = [], []
    for w in range(tau + 1):
        keep = slots >= w
        ks.append(keys[keep])
        ts.append(slots[keep] - w)
    return np.concatenate(ks), np.concatenate(ts)


def update_group(e: MpuEnsemble, gm: GroupMap, flow_id: str, slot: int) -> None:
    e.update(flow_key(gm.group_of(flow_id)), slot)


def update_group_many(e: MpuEnsemble, gm: GroupMap, flow_ids: Iterable[str], slots) -> None:
    keys = np.fromiter((flow_key(gm.group_of(f)) for f in flow_ids), dtype=np.uint64)
    e.update_many(keys, slots)


def update_lagged(e: MpuEnsemble, lc: LagConfig, slot: int) -> None:
    """Register one activity of ``lc.target`` at ``slot`` on its virtual group."""
    if not 0 <= slot < e.epoch_len:
        e.update(lc.virtual_key, slot)  # raises the range error
    key = lc.virtual_key
    for t in lagged_slots(slot, lc.tau):
        e.update(key, t)


def update_related(e: MpuEnsemble, service_id: str, src_key: str, slot: int) -> None:
    e.update_typed(flow_key(service_id), tuple_key(src_key, slot))


def update_related_many(e: MpuEnsemble, service_ids: Iterable[str], src_keys: Iterable[str], slots) -> None:
    keys = np.fromiter((flow_key(s) for s in service_ids), dtype=np.uint64)
    items = np.fromiter((tuple_key(src, int(t)) for src, t in zip(src_keys, slots)), dtype=np.uint64)
    e.update_typed_many(keys, items)
