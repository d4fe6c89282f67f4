"""Timestamped question replay under the online constraint.

Each question rebuilds the memory exactly as of its ask time, runs one
episode, and is scored with the binary answer reward. Reports carry
per-question outcomes, aggregate and per-category accuracy, memory
counters, and the audit of the newest timestamp visible to each episode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .agent import DEFAULT_MAX_TURNS, Trajectory, run_episode
from .errors import DataFormatError
from .grpo import reward
from .runstate import ReconstructedMemory, RunState, reconstruct_at
from .toolkit import ToolContext


@dataclass(frozen=True)
class QuestionItem:
    id: str
    asked_at_s: float
    question: str
    gold: str
    options: tuple[tuple[str, str], ...] | None = None
    category: str | None = None

    def __post_init__(self) -> None:
        if self.asked_at_s < 0:
            raise ValueError(f"asked_at_s must be >= 0, got {self.asked_at_s}")
        if self.options is not None:
            letters = [letter for letter, _ in self.options]
            if self.gold not in letters:
                raise ValueError(
                    f"question {self.id}: gold {self.gold!r} is not one of the option letters {letters}"
                )

    def rendered_question(self) -> str:
        """Question text with options passed through verbatim."""
        if not self.options:
            return self.question
        lines = [self.question, "Options:"]
        lines += [f"{letter}. {text}" for letter, text in self.options]
        return "\n".join(lines)


def convert_external_records(
    records: Sequence[dict[str, Any]],
    id_field: str = "id",
    time_field: str = "asked_at_s",
    question_field: str = "question",
    gold_field: str = "gold",
    options_field: str | None = None,
    category_field: str | None = None,
) -> list[QuestionItem]:
    """Converter stub for external benchmark formats.

    Maps already-parsed records onto the local question schema by field
    name and sorts by ask time; shipping or downloading benchmark data
    stays out of scope. Extend per benchmark as needed (letter extraction,
    option normalization, etc.).
    """
    items = []
    for rec in records:
        options = None
        if options_field and rec.get(options_field) is not None:
            options = tuple((str(l), str(t)) for l, t in rec[options_field])
        items.append(
            QuestionItem(
                id=str(rec[id_field]),
                asked_at_s=float(rec[time_field]),
                question=str(rec[question_field]),
                gold=str(rec[gold_field]),
                options=options,
                category=str(rec[category_field]) if category_field and rec.get(category_field) else None,
            )
        )
    items.sort(key=lambda q: q.asked_at_s)
    return items


def load_questions(path: str | Path) -> list[QuestionItem]:
    """Parse a questions JSONL file; ask times must be sorted."""
    path = Path(path)
    items: list[QuestionItem] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                options = rec.get("options")
                items.append(
                    QuestionItem(
                        id=str(rec["id"]),
                        asked_at_s=float(rec["asked_at_s"]),
                        question=str(rec["question"]),
                        gold=str(rec["gold"]),
                        options=None
                        if options is None
                        else tuple((str(l), str(t)) for l, t in options),
                        category=rec.get("category"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path} line {lineno}: {exc}") from exc
    for prev, curr in zip(items, items[1:]):
        if curr.asked_at_s < prev.asked_at_s:
            raise DataFormatError(
                f"{path}: questions must be sorted by asked_at_s "
                f"({curr.id} at {curr.asked_at_s} after {prev.id} at {prev.asked_at_s})"
            )
    return items


@dataclass
class QuestionOutcome:
    id: str
    asked_at_s: float
    category: str | None
    answer: str | None
    reward: int
    turns_used: int
    tools_used: list[str]
    terminated_by: str
    max_visible_timestamp_s: float | None
    unanswerable: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "asked_at_s": self.asked_at_s,
            "category": self.category,
            "answer": self.answer,
            "reward": self.reward,
            "turns_used": self.turns_used,
            "tools_used": self.tools_used,
            "terminated_by": self.terminated_by,
            "max_visible_timestamp_s": self.max_visible_timestamp_s,
            "unanswerable": self.unanswerable,
        }


@dataclass
class RunReport:
    outcomes: list[QuestionOutcome] = field(default_factory=list)
    memory_stats: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)
    policy: str = ""

    @property
    def accuracy(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(o.reward for o in self.outcomes) / len(self.outcomes)

    def per_category(self) -> dict[str, float]:
        buckets: dict[str, list[int]] = {}
        for o in self.outcomes:
            buckets.setdefault(o.category or "uncategorized", []).append(o.reward)
        return {cat: sum(r) / len(r) for cat, r in sorted(buckets.items())}

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy": self.policy,
            "config": self.config,
            "accuracy": self.accuracy,
            "per_category": self.per_category(),
            "questions": [o.to_dict() for o in self.outcomes],
            "memory_stats": self.memory_stats,
        }

    def to_table(self) -> str:
        header = f"{'id':<12} {'asked':>8} {'reward':>6} {'turns':>5} {'term':<12} tools"
        lines = [header, "-" * len(header)]
        for o in self.outcomes:
            tools = ",".join(o.tools_used) if o.tools_used else "-"
            lines.append(
                f"{o.id:<12} {o.asked_at_s:>8.1f} {o.reward:>6d} {o.turns_used:>5d} "
                f"{o.terminated_by:<12} {tools}"
            )
        lines.append("-" * len(header))
        lines.append(f"accuracy: {self.accuracy:.4f} over {len(self.outcomes)} question(s)")
        for cat, acc in self.per_category().items():
            lines.append(f"  {cat}: {acc:.4f}")
        return "\n".join(lines)

    def series_csv(self) -> str:
        rows = ["question_id,asked_at_s,reward,turns_used,tool_calls"]
        for o in self.outcomes:
            rows.append(
                f"{o.id},{o.asked_at_s},{o.reward},{o.turns_used},{len(o.tools_used)}"
            )
        return "\n".join(rows) + "\n"


def replay_run(
    run_state: RunState,
    questions: Sequence[QuestionItem],
    policy,
    captioner,
    embedder,
    ocr,
    detector,
    max_turns: int = DEFAULT_MAX_TURNS,
    attach_images: bool = False,
    trajectory_sink=None,
) -> RunReport:
    """Score every question against memory reconstructed at its ask time."""
    report = RunReport(
        config=run_state.config.to_dict(),
        memory_stats=_load_stats(run_state),
    )
    for item in questions:
        if run_state.stream_end_s is None or item.asked_at_s > run_state.stream_end_s:
            report.outcomes.append(
                QuestionOutcome(
                    id=item.id,
                    asked_at_s=item.asked_at_s,
                    category=item.category,
                    answer=None,
                    reward=0,
                    turns_used=0,
                    tools_used=[],
                    terminated_by="unanswerable",
                    max_visible_timestamp_s=None,
                    unanswerable=True,
                )
            )
            continue
        memory: ReconstructedMemory = reconstruct_at(
            run_state, item.asked_at_s, captioner, embedder
        )
        tools = ToolContext(
            snapshot=memory.stm.snapshot(),
            ltm=memory.ltm,
            embedder=embedder,
            ocr=ocr,
            detector=detector,
        )
        trajectory: Trajectory = run_episode(
            item.id,
            item.rendered_question(),
            item.asked_at_s,
            memory.stm.snapshot(),
            memory.ltm,
            policy,
            tools,
            max_turns=max_turns,
            attach_images=attach_images,
        )
        if trajectory_sink is not None:
            trajectory_sink(trajectory)
        report.outcomes.append(
            QuestionOutcome(
                id=item.id,
                asked_at_s=item.asked_at_s,
                category=item.category,
                answer=trajectory.final_answer,
                reward=reward(trajectory.final_answer, item.gold),
                turns_used=len(trajectory.turns),
                tools_used=trajectory.tools_used,
                terminated_by=trajectory.terminated_by,
                max_visible_timestamp_s=trajectory.max_visible_timestamp_s,
            )
        )
    return report


def _load_stats(run_state: RunState) -> dict[str, Any]:
    stats_path = run_state.run_dir / "stats.json"
    if stats_path.is_file():
        try:
            return json.loads(stats_path.read_text())
        except json.JSONDecodeError:
            return {}
    return {}
