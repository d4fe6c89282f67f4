"""Online event boundary detection.

A frame continues the active event unless the Pearson correlation between
its histogram and the event's running mean histogram drops below the
threshold, and only once the event has processed more than ``min_len``
frames (guards against jitter-induced fragmentation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionError
from .frames import Frame, Histogram

DEFAULT_DELTA = 0.2
DEFAULT_MIN_EVENT_LEN = 8
DEFAULT_FIXED_INTERVAL_S = 30.0


@dataclass
class EventState:
    """Bookkeeping for one event; ``n`` counts every frame routed to the
    event since it opened, including reservoir-rejected ones."""

    event_id: int
    n: int
    mean_histogram: Histogram
    start_timestamp_s: float
    last_timestamp_s: float


def pearson_correlation(a: Histogram, b: Histogram) -> float:
    """Correlation of two histograms over bins, population statistics.

    Degenerate inputs (a flat histogram on either side) yield 1.0 for
    element-wise equal vectors and 0.0 otherwise.
    """
    if a.bin_count != b.bin_count:
        raise DimensionError(f"bin counts differ: {a.bin_count} vs {b.bin_count}")
    if a.bin_count < 2:
        raise DimensionError("correlation requires at least 2 bins")
    return float(_kernels.pearson(a.bins, b.bins))


def should_split(
    state: EventState,
    h_new: Histogram,
    delta: float = DEFAULT_DELTA,
    min_len: int = DEFAULT_MIN_EVENT_LEN,
) -> bool:
    """True when the active event must close before admitting this frame."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    if min_len < 1:
        raise ValueError(f"min_len must be >= 1, got {min_len}")
    if state.n <= min_len:
        return False
    return pearson_correlation(state.mean_histogram, h_new) < delta


def mean_of_histograms(histograms: Sequence[Histogram]) -> Histogram:
    """Exact arithmetic mean over held-frame histograms."""
    if not histograms:
        raise ValueError("cannot average zero histograms")
    stacked = np.stack([h.bins for h in histograms])
    return Histogram(stacked.mean(axis=0))


def update_running_mean(state: EventState, held_histograms: Sequence[Histogram]) -> EventState:
    """Recompute the event mean from the buffer contents after an
    admit/replace; never incremental, so reservoir replacements cannot
    drift the mean."""
    state.mean_histogram = mean_of_histograms(held_histograms)
    return state


class BoundaryPolicy(Protocol):
    """Decides whether an incoming frame opens a new event."""

    def starts_new_event(self, state: EventState, frame: Frame) -> bool: ...


@dataclass(frozen=True)
class CorrelationBoundaryPolicy:
    """Content-driven segmentation via the histogram correlation test."""

    delta: float = DEFAULT_DELTA
    min_len: int = DEFAULT_MIN_EVENT_LEN

    def starts_new_event(self, state: EventState, frame: Frame) -> bool:
        return should_split(state, frame.histogram, self.delta, self.min_len)


@dataclass(frozen=True)
class FixedLengthBoundaryPolicy:
    """Baseline: a boundary at every multiple of ``interval_s`` regardless
    of content."""

    interval_s: float = DEFAULT_FIXED_INTERVAL_S

    def __post_init__(self) -> None:
        if self.interval_s <= 0:
            raise ValueError(f"interval_s must be positive, got {self.interval_s}")

    def starts_new_event(self, state: EventState, frame: Frame) -> bool:
        return math.floor(frame.timestamp_s / self.interval_s) > math.floor(
            state.start_timestamp_s / self.interval_s
        )
