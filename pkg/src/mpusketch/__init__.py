"""Streaming sketches of pairwise flow co-activity.

The main entry points are :class:`MpuSketch` (one sketch), :class:`MpuEnsemble`
(median of independent copies), :func:`plan` (parameters from an accuracy
target) and :class:`ExactTracker` (the exact baseline).
"""
from ._backend import NAME as BACKEND
from .errors import (IncompatibleSketchError, InfeasibleSpecError, MemoryCapError, MpuError,
                     SketchFormatError, SlotRangeError, TraceFormatError)
from .estimator import MpuEnsemble, Plan, PlanInput, new_ensemble, plan
from .hashing import flow_key, lag_key, tuple_key
from .oracle import ExactTracker, freq_stats, join_size
from .sketch import EstimateBreakdown, MpuParams, MpuSketch, new_sketch

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "EstimateBreakdown", "ExactTracker", "IncompatibleSketchError", "InfeasibleSpecError",
    "MemoryCapError", "MpuEnsemble", "MpuError", "MpuParams", "MpuSketch", "Plan", "PlanInput",
    "SketchFormatError", "SlotRangeError", "TraceFormatError", "flow_key", "freq_stats", "join_size",
    "lag_key", "new_ensemble", "new_sketch", "plan", "tuple_key",
]
