"""Event-structured short-term frame buffer.

Holds at most ``capacity`` frames across an ordered list of events. Incoming
frames either extend the active event, trigger a boundary, or (once the
active event alone has processed more than ``capacity`` frames) pass through
reservoir sampling. Whole oldest events are evicted FIFO whenever the total
held count exceeds the budget; callers archive the evictions.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Any

from .errors import EvictionImpossibleError, StreamOrderError
from .frames import Frame, frame_label
from .segmenter import (
    BoundaryPolicy,
    CorrelationBoundaryPolicy,
    EventState,
    update_running_mean,
)

DEFAULT_CAPACITY = 32


class AdmitOutcome(enum.Enum):
    APPENDED = "appended"
    RESERVOIR_REPLACED = "reservoir_replaced"
    RESERVOIR_REJECTED = "reservoir_rejected"
    BOUNDARY_STARTED_NEW_EVENT = "boundary_started_new_event"


@dataclass
class Event:
    """An event's state plus the frames currently held for it."""

    state: EventState
    held: list[Frame]

    @property
    def held_count(self) -> int:
        return len(self.held)

    def mean_intensity(self) -> float:
        total = sum(int(f.pixels.sum(dtype="int64")) for f in self.held)
        count = sum(f.pixels.size for f in self.held)
        return total / count


@dataclass
class AdmitResult:
    outcome: AdmitOutcome
    replaced_slot: int | None = None
    evicted_events: list[Event] = field(default_factory=list)


@dataclass
class MemoryStats:
    frames_admitted: int = 0
    events_created: int = 0
    boundaries: int = 0
    evictions: int = 0
    reservoir_accepts: int = 0
    reservoir_rejects: int = 0

    @property
    def reservoir_accept_rate(self) -> float:
        total = self.reservoir_accepts + self.reservoir_rejects
        return self.reservoir_accepts / total if total else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "frames_admitted": self.frames_admitted,
            "events_created": self.events_created,
            "boundaries": self.boundaries,
            "evictions": self.evictions,
            "reservoir_accepts": self.reservoir_accepts,
            "reservoir_rejects": self.reservoir_rejects,
            "reservoir_accept_rate": self.reservoir_accept_rate,
        }


@dataclass(frozen=True)
class SnapshotEntry:
    label: str
    frame: Frame


@dataclass(frozen=True)
class Snapshot:
    """Immutable flattened view of all held frames, relabeled from 0 in
    global timestamp order."""

    entries: tuple[SnapshotEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> SnapshotEntry:
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    def max_timestamp(self) -> float | None:
        return self.entries[-1].frame.timestamp_s if self.entries else None

    def restricted(self, max_timestamp_s: float) -> "Snapshot":
        """Drop frames after the given instant and renumber labels from 0."""
        frames = [e.frame for e in self.entries if e.frame.timestamp_s <= max_timestamp_s]
        return Snapshot(
            entries=tuple(
                SnapshotEntry(label=frame_label(j, f.timestamp_s), frame=f)
                for j, f in enumerate(frames)
            )
        )


def reservoir_decide(n: int, capacity: int, rng: random.Random) -> int | None:
    """Admit the n-th routed frame with probability capacity/n; on accept,
    return a uniform slot in [0, capacity) to replace, else None.

    The rng advances deterministically: one uniform draw, plus one slot draw
    only on acceptance.
    """
    if n <= capacity:
        raise ValueError(f"reservoir applies only when n > capacity ({n} <= {capacity})")
    if rng.random() < capacity / n:
        return rng.randrange(capacity)
    return None


class ShortTermMemory:
    """Single-writer frame buffer; snapshots are safe to share.

    Randomness comes from one ``random.Random(seed)`` instance consumed
    only by reservoir decisions, so identical streams with identical seeds
    reproduce the buffer bit-for-bit (cross-language bit compatibility is
    not promised; determinism within this implementation is).
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        boundary_policy: BoundaryPolicy | None = None,
        seed: int = 0,
    ):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.boundary_policy = boundary_policy or CorrelationBoundaryPolicy()
        self.events: list[Event] = []
        self.stats = MemoryStats()
        self._rng = random.Random(seed)
        self._next_event_id = 0
        self._last_timestamp: float | None = None

    @property
    def active_event(self) -> Event | None:
        return self.events[-1] if self.events else None

    def total_held(self) -> int:
        return sum(e.held_count for e in self.events)

    def _open_event(self, frame: Frame) -> Event:
        state = EventState(
            event_id=self._next_event_id,
            n=1,
            mean_histogram=frame.histogram,
            start_timestamp_s=frame.timestamp_s,
            last_timestamp_s=frame.timestamp_s,
        )
        self._next_event_id += 1
        event = Event(state=state, held=[frame])
        self.events.append(event)
        self.stats.events_created += 1
        return event

    def admit(self, frame: Frame) -> AdmitResult:
        """Route one frame through boundary, append, or reservoir handling,
        then evict whole oldest events while the budget is exceeded."""
        if self._last_timestamp is not None and frame.timestamp_s <= self._last_timestamp:
            raise StreamOrderError(
                f"frame timestamp {frame.timestamp_s} not after {self._last_timestamp}"
            )
        self._last_timestamp = frame.timestamp_s
        self.stats.frames_admitted += 1

        replaced_slot: int | None = None
        if not self.events:
            self._open_event(frame)
            outcome = AdmitOutcome.APPENDED
        else:
            active = self.events[-1]
            if self.boundary_policy.starts_new_event(active.state, frame):
                # Active event stays in STM as completed; budget pressure
                # will hand it to the archive later.
                self._open_event(frame)
                self.stats.boundaries += 1
                outcome = AdmitOutcome.BOUNDARY_STARTED_NEW_EVENT
            else:
                active.state.n += 1
                active.state.last_timestamp_s = frame.timestamp_s
                if active.state.n <= self.capacity:
                    active.held.append(frame)
                    update_running_mean(active.state, [f.histogram for f in active.held])
                    outcome = AdmitOutcome.APPENDED
                else:
                    slot = reservoir_decide(active.state.n, self.capacity, self._rng)
                    if slot is None:
                        self.stats.reservoir_rejects += 1
                        outcome = AdmitOutcome.RESERVOIR_REJECTED
                    else:
                        # Drop the chosen slot and append at the end: the
                        # newest frame keeps the buffer timestamp-sorted.
                        active.held.pop(slot)
                        active.held.append(frame)
                        update_running_mean(
                            active.state, [f.histogram for f in active.held]
                        )
                        self.stats.reservoir_accepts += 1
                        replaced_slot = slot
                        outcome = AdmitOutcome.RESERVOIR_REPLACED

        evicted: list[Event] = []
        while self.total_held() > self.capacity:
            evicted.append(self.evict_oldest())
        return AdmitResult(outcome=outcome, replaced_slot=replaced_slot, evicted_events=evicted)

    def evict_oldest(self) -> Event:
        """Remove and return the event with the earliest start; the active
        event is never evicted by this path."""
        if len(self.events) < 2:
            raise EvictionImpossibleError(
                "only the active event is buffered; nothing can be evicted"
            )
        oldest = min(range(len(self.events)), key=lambda i: self.events[i].state.start_timestamp_s)
        self.stats.evictions += 1
        return self.events.pop(oldest)

    def snapshot(self, max_timestamp_s: float | None = None) -> Snapshot:
        """Flatten held frames in global timestamp order, relabeled from 0.

        ``max_timestamp_s`` restricts the view for online replay: frames
        after that instant are omitted and labels renumbered.
        """
        frames = [f for e in self.events for f in e.held]
        if max_timestamp_s is not None:
            frames = [f for f in frames if f.timestamp_s <= max_timestamp_s]
        entries = tuple(
            SnapshotEntry(label=frame_label(j, f.timestamp_s), frame=f)
            for j, f in enumerate(frames)
        )
        return Snapshot(entries=entries)

    def dump_state(self) -> dict[str, Any]:
        """Debug/export view of the buffer layout."""
        return {
            "capacity": self.capacity,
            "events": [
                {
                    "event_id": e.state.event_id,
                    "n": e.state.n,
                    "start_s": e.state.start_timestamp_s,
                    "end_s": e.state.last_timestamp_s,
                    "held": [f.stream_index for f in e.held],
                }
                for e in self.events
            ],
        }

    # ------------------------------------------------------------------
    # checkpoint support
    def rng_state(self) -> tuple:
        return self._rng.getstate()

    def set_rng_state(self, state: tuple) -> None:
        self._rng.setstate(state)

    def checkpoint_state(self) -> dict[str, Any]:
        """JSON-serializable snapshot of the mutable buffer state; held
        frames are referenced by stream index and reloaded on restore."""
        state = self._rng.getstate()
        return {
            "rng_state": [state[0], list(state[1]), state[2]],
            "next_event_id": self._next_event_id,
            "last_timestamp": self._last_timestamp,
            "events": self.dump_state()["events"],
            "stats": self.stats.to_dict(),
        }

    def restore(self, state: dict[str, Any], frames_by_index: dict[int, Frame]) -> None:
        """Rebuild buffer contents from a checkpoint plus reloaded frames."""
        from .segmenter import mean_of_histograms

        rng = state["rng_state"]
        self._rng.setstate((rng[0], tuple(rng[1]), rng[2]))
        self._next_event_id = int(state["next_event_id"])
        self._last_timestamp = state["last_timestamp"]
        self.events = []
        for ev in state["events"]:
            held = [frames_by_index[i] for i in ev["held"]]
            self.events.append(
                Event(
                    state=EventState(
                        event_id=int(ev["event_id"]),
                        n=int(ev["n"]),
                        mean_histogram=mean_of_histograms([f.histogram for f in held]),
                        start_timestamp_s=float(ev["start_s"]),
                        last_timestamp_s=float(ev["end_s"]),
                    ),
                    held=held,
                )
            )
        st = state["stats"]
        self.stats = MemoryStats(
            frames_admitted=int(st["frames_admitted"]),
            events_created=int(st["events_created"]),
            boundaries=int(st["boundaries"]),
            evictions=int(st["evictions"]),
            reservoir_accepts=int(st["reservoir_accepts"]),
            reservoir_rejects=int(st["reservoir_rejects"]),
        )
