"""Exact, memory-hungry ground truth for every correlation notion.

Each flow (or group) keeps the set of slots it was active in; correlations
are plain set arithmetic.  Unknown keys behave as empty sets.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from collections.abc import Hashable, Iterable

from .errors import SlotRangeError


class ExactTracker:
    def __init__(self, epoch_len: int):
        if epoch_len < 1:
            raise ValueError(f"epoch_len must be >= 1, got {epoch_len}")
        self.epoch_len = epoch_len
        self.activity: dict[Hashable, set[int]] = defaultdict(set)
        # item sets keyed by arbitrary item type (e.g. (src, slot) tuples)
        self.typed: dict[Hashable, set[Hashable]] = defaultdict(set)

    def record(self, key: Hashable, slot: int) -> None:
        if not 0 <= slot < self.epoch_len:
            raise SlotRangeError(f"slot {slot} outside epoch [0, {self.epoch_len})")
        self.activity[key].add(slot)

    def record_typed(self, key: Hashable, item: Hashable) -> None:
        self.typed[key].add(item)

    def slots(self, key: Hashable) -> frozenset[int]:
        return frozenset(self.activity.get(key, ()))

    def keys(self):
        return self.activity.keys()

    def cor(self, i: Hashable, j: Hashable) -> int:
        return len(self.slots(i) & self.slots(j))

    def typed_cor(self, i: Hashable, j: Hashable) -> int:
        return len(self.typed.get(i, set()) & self.typed.get(j, set()))

    def union(self, group: Iterable[Hashable]) -> set[int]:
        out: set[int] = set()
        for k in group:
            out |= self.activity.get(k, set())
        return out

    def gcor_any(self, group_a: Iterable[Hashable], group_b: Iterable[Hashable]) -> int:
        """Co-activity of the "any member active" indicators of two groups."""
        return len(self.union(group_a) & self.union(group_b))

    def cor_tau(self, i: Hashable, j: Hashable, tau: int) -> int:
        """``sum_{0<=w<=tau} sum_t f_i(t) f_j(t+w)``; slots past the epoch are inactive."""
        if tau < 0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        fi, fj = self.slots(i), self.slots(j)
        return sum(1 for t in fi for w in range(tau + 1) if t + w in fj)

    def lag_union_cor(self, i: Hashable, j: Hashable, tau: int) -> int:
        """``|F_i & {t : j active somewhere in [t, t+tau]}|``.

        This is what a min-value sketch sees for the lagged virtual group,
        since it only registers distinct slots.  Equals :meth:`cor_tau` when
        ``j``'s active slots are more than ``tau`` apart.
        """
        if tau < 0:
            raise ValueError(f"tau must be >= 0, got {tau}")
        shifted = {t - w for t in self.slots(j) for w in range(tau + 1) if t - w >= 0}
        return len(self.slots(i) & shifted)


def freq_stats(items: Iterable[Hashable]) -> tuple[Counter, int]:
    """Multiplicity per type and number of distinct types.

    The returned ``Counter`` reports 0 for absent types.
    """
    freq = Counter(items)
    return freq, len(freq)


def join_size(x: Iterable[Hashable], y: Iterable[Hashable]) -> int:
    fx, _ = freq_stats(x)
    fy, _ = freq_stats(y)
    return sum(n * fy[k] for k, n in fx.items())
