"""Bounded-memory streaming video memory with an active QA agent harness.

The package turns an unbounded frame stream into an event-structured
short-term buffer plus a searchable long-term archive, answers timestamped
questions through a tool-using episode loop, and ships the group-relative
policy-optimization arithmetic used to train such agents.
"""

from ._kernels import backend_name as kernel_backend
from .frames import Frame, Histogram, compute_histogram, sample_stream, to_grayscale
from .ltm import ArchivedEvent, LtmStore, cosine_similarity
from .segmenter import EventState, pearson_correlation, should_split
from .stm import AdmitOutcome, AdmitResult, ShortTermMemory, reservoir_decide
from .grpo import clipped_surrogate, group_advantages, reward

__version__ = "0.1.0"

__all__ = [
    "AdmitOutcome",
    "AdmitResult",
    "ArchivedEvent",
    "EventState",
    "Frame",
    "Histogram",
    "LtmStore",
    "ShortTermMemory",
    "clipped_surrogate",
    "compute_histogram",
    "cosine_similarity",
    "group_advantages",
    "kernel_backend",
    "pearson_correlation",
    "reservoir_decide",
    "reward",
    "sample_stream",
    "should_split",
    "to_grayscale",
    "__version__",
]
