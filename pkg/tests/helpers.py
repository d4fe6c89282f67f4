"""Shared builders for the test suite."""

import numpy as np

from streammem.frames import make_frame
from streammem.ltm import ArchivedEvent
from streammem.segmenter import EventState
from streammem.stm import Event


def const_frame(i, value=100, t=None, side=8):
    px = np.full(side * side, value, dtype=np.uint8)
    return make_frame(i, float(i) if t is None else t, side, side, px)


def build_event(event_id, start_s, end_s, value=200, n_frames=3, side=4, index_base=None):
    held = []
    span = max(1, n_frames - 1)
    base = event_id * 1000 if index_base is None else index_base
    for j in range(n_frames):
        t = start_s + (end_s - start_s) * j / span if n_frames > 1 else start_s
        px = np.full(side * side, value, dtype=np.uint8)
        held.append(make_frame(base + j, t, side, side, px))
    state = EventState(
        event_id=event_id,
        n=n_frames,
        mean_histogram=held[0].histogram,
        start_timestamp_s=start_s,
        last_timestamp_s=end_s,
    )
    return Event(state=state, held=held)


def make_entry(event_id, start_s, end_s, embedding=None, caption="c", pending=False):
    return ArchivedEvent(
        event_id=event_id,
        start_s=start_s,
        end_s=end_s,
        caption=None if pending else caption,
        embedding=None if pending else np.asarray(embedding, dtype=np.float64),
        pending=pending,
    )
