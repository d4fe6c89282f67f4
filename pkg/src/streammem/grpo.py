"""Group-relative policy optimization arithmetic at trajectory granularity.

Binary terminal rewards, within-group advantage normalization (population
statistics, degenerate groups collapse to zero), and the clipped surrogate
objective evaluated on caller-supplied probability ratios. There is no KL
term; optimization is driven purely by the group-relative advantages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError

DEFAULT_EPSILON = 0.2
DEGENERATE_STD = 1e-8


def normalize_answer(text: str) -> str:
    """Trim, case-fold, and strip one trailing period."""
    out = text.strip().casefold()
    if out.endswith("."):
        out = out[:-1]
    return out.strip()


def reward(predicted: str | None, gold: str) -> int:
    """1 iff the normalized prediction matches the normalized gold answer;
    an absent prediction (turn budget or policy failure) scores 0."""
    if not gold:
        raise ValueError("gold answer must be non-empty")
    if predicted is None:
        return 0
    return 1 if normalize_answer(predicted) == normalize_answer(gold) else 0


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    """(r - mean) / std over the group, population std; a near-constant
    group (std < 1e-8) yields all-zero advantages."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"a reward group needs at least 2 entries, got shape {r.shape}")
    std = float(r.std())
    if std < DEGENERATE_STD:
        return np.zeros_like(r)
    return (r - r.mean()) / std


@dataclass(frozen=True)
class RewardGroup:
    rewards: np.ndarray
    advantages: np.ndarray

    @classmethod
    def from_rewards(cls, rewards: Sequence[float]) -> "RewardGroup":
        r = np.asarray(rewards, dtype=np.float64)
        return cls(rewards=r, advantages=group_advantages(r))


def clipped_surrogate(
    ratios: Sequence[float],
    advantages: Sequence[float],
    epsilon: float = DEFAULT_EPSILON,
) -> float:
    """(1/G) sum of min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)."""
    r = np.asarray(ratios, dtype=np.float64)
    a = np.asarray(advantages, dtype=np.float64)
    if r.shape != a.shape or r.ndim != 1 or r.size == 0:
        raise ValueError(f"ratios and advantages must be matching 1-D vectors, got {r.shape} and {a.shape}")
    if np.any(r <= 0):
        raise ValueError("probability ratios must be positive")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    clipped = np.clip(r, 1.0 - epsilon, 1.0 + epsilon)
    return float(np.mean(np.minimum(r * a, clipped * a)))


def process_groups_file(in_path: str | Path, out_path: str | Path) -> int:
    """Batch mode: read one {"rewards", "ratios", "epsilon"?} group per
    line, write {"advantages", "objective"} per line. Returns the number of
    groups processed."""
    in_path, out_path = Path(in_path), Path(out_path)
    count = 0
    with in_path.open() as src, out_path.open("w") as dst:
        for lineno, line in enumerate(src, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                rewards = rec["rewards"]
                ratios = rec["ratios"]
                epsilon = float(rec.get("epsilon", DEFAULT_EPSILON))
                advantages = group_advantages(rewards)
                objective = clipped_surrogate(ratios, advantages, epsilon)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{in_path} line {lineno}: {exc}") from exc
            dst.write(
                json.dumps(
                    {"advantages": [float(x) for x in advantages], "objective": objective}
                )
                + "\n"
            )
            count += 1
    return count
