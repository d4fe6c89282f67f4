"""Multi-turn episode runner.

Builds the policy context (system prompt, labeled short-term frames,
question, prior turns), alternates policy generations with tool dispatches,
and extracts the final boxed answer. Policies signal tool use with a fenced
JSON block {"tool": name, "arguments": {...}}; native tool-calling of real
backends is normalized to this form at the client boundary.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

from .errors import BackendError
from .ltm import TimeBoundedLtmView
from .stm import Snapshot
from .toolkit import Observation, ToolCall, ToolContext, dispatch, default_registry, error_observation

DEFAULT_MAX_TURNS = 8

TOOL_SYNTAX_NOTE = (
    "Tool call format: to invoke a tool, output a fenced JSON block like\n"
    '```json\n{"tool": "search_memory", "arguments": {"query": "..."}}\n```\n'
    "with exactly one tool per turn."
)

_BOXED_MARK = "\\boxed{"
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)


def load_system_prompt() -> str:
    return (
        resources.files("streammem").joinpath("resources/system_prompt.txt").read_text()
    )


@dataclass(frozen=True)
class FinalAnswer:
    text: str

    def to_record(self) -> dict[str, Any]:
        return {"type": "final_answer", "text": self.text}


def _extract_boxed(text: str) -> str | None:
    """Content of the last complete, balanced boxed span."""
    found: list[str] = []
    i = 0
    while True:
        j = text.find(_BOXED_MARK, i)
        if j < 0:
            break
        k = j + len(_BOXED_MARK)
        depth = 1
        while k < len(text) and depth:
            if text[k] == "{":
                depth += 1
            elif text[k] == "}":
                depth -= 1
            k += 1
        if depth == 0:
            found.append(text[j + len(_BOXED_MARK) : k - 1])
            i = k
        else:
            i = j + len(_BOXED_MARK)
    return found[-1] if found else None


def _extract_tool_call(text: str) -> ToolCall | None:
    """Last parseable fenced JSON tool block; also accepts a message that is
    a bare JSON object."""
    candidates = _FENCE_RE.findall(text)
    stripped = text.strip()
    if stripped.startswith("{") and stripped.endswith("}"):
        candidates.append(stripped)
    call: ToolCall | None = None
    for block in candidates:
        try:
            obj = json.loads(block.strip())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and isinstance(obj.get("tool"), str):
            args = obj.get("arguments", {})
            if isinstance(args, dict):
                call = ToolCall(tool_name=obj["tool"], arguments=args)
    return call


def parse_action(text: str) -> ToolCall | FinalAnswer | None:
    """Total parse of one policy generation: a final boxed answer wins, then
    a tool call, else None (unparseable)."""
    boxed = _extract_boxed(text)
    if boxed is not None:
        return FinalAnswer(boxed)
    return _extract_tool_call(text)


@dataclass
class Turn:
    """One exchange: the policy's raw text, the action parsed from it, and
    the observation it earned (absent for final answers)."""

    thought: str
    action: ToolCall | FinalAnswer | None
    observation: Observation | None

    def to_record(self) -> dict[str, Any]:
        return {
            "thought": self.thought,
            "action": None if self.action is None else self.action.to_record(),
            "observation": None if self.observation is None else self.observation.to_record(),
        }


@dataclass
class Trajectory:
    question_id: str
    question: str
    asked_at_s: float
    turns: list[Turn] = field(default_factory=list)
    final_answer: str | None = None
    terminated_by: str = "max_turns"  # answer | max_turns | policy_error
    max_visible_timestamp_s: float | None = None

    @property
    def tools_used(self) -> list[str]:
        return [t.action.tool_name for t in self.turns if isinstance(t.action, ToolCall)]

    def to_record(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "asked_at_s": self.asked_at_s,
            "turns": [t.to_record() for t in self.turns],
            "final_answer": self.final_answer,
            "terminated_by": self.terminated_by,
            "max_visible_timestamp_s": self.max_visible_timestamp_s,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_record())


def canonical_json(obj: Any) -> str:
    """Stable serialization used by golden-trajectory comparisons."""
    return json.dumps(obj, sort_keys=True, indent=2)


@dataclass
class PolicyRequest:
    """What a policy backend sees for one generation."""

    question_id: str
    system_prompt: str
    messages: list[dict[str, str]]
    images: list[str] = field(default_factory=list)  # base64 PNGs, optional


def build_context(
    system_prompt: str,
    snapshot: Snapshot,
    question: str,
    asked_at_s: float,
    prior_turns: Sequence[Turn],
    question_id: str = "",
    attach_images: bool = False,
) -> PolicyRequest:
    """Assemble the policy request: system prompt plus tool-syntax note,
    labeled frames, the question, and the prior thought/observation thread."""
    frame_lines = [entry.label for entry in snapshot]
    listing = "\n".join(frame_lines) if frame_lines else "(no frames available)"
    user = (
        "Short-term memory frames:\n"
        f"{listing}\n\n"
        f"Question (asked at {asked_at_s:.1f}s): {question}"
    )
    messages = [
        {"role": "system", "content": system_prompt},
        {"role": "system", "content": TOOL_SYNTAX_NOTE},
        {"role": "user", "content": user},
    ]
    for turn in prior_turns:
        messages.append({"role": "assistant", "content": turn.thought})
        if turn.observation is not None:
            obs = turn.observation
            if obs.status == "ok":
                messages.append({"role": "user", "content": f"Observation:\n{obs.rendered_text}"})
            else:
                messages.append(
                    {
                        "role": "user",
                        "content": f"Observation (error {obs.error_code}):\n{obs.rendered_text}",
                    }
                )
    images: list[str] = []
    if attach_images:
        from .backends import encode_frame_png

        images = [encode_frame_png(entry.frame) for entry in snapshot]
    return PolicyRequest(
        question_id=question_id,
        system_prompt=system_prompt,
        messages=messages,
        images=images,
    )


UNPARSEABLE_MESSAGE = (
    "Could not parse an action from the reply. Use a fenced JSON tool call "
    'like {"tool": "search_memory", "arguments": {...}} or finish with '
    "\\boxed{your answer}."
)


def run_episode(
    question_id: str,
    question: str,
    asked_at_s: float,
    snapshot: Snapshot,
    ltm_store,
    policy,
    tools: ToolContext | None = None,
    *,
    embedder=None,
    ocr=None,
    detector=None,
    registry=None,
    max_turns: int = DEFAULT_MAX_TURNS,
    system_prompt: str | None = None,
    attach_images: bool = False,
) -> Trajectory:
    """Run one question to completion under the online constraint.

    The snapshot and archive are both clamped to asked_at_s regardless of
    what the caller passed, so nothing later than the ask time can reach the
    context or the tools.
    """
    if max_turns < 1:
        raise ValueError(f"max_turns must be >= 1, got {max_turns}")
    visible = snapshot.restricted(asked_at_s)
    view = TimeBoundedLtmView(ltm_store, asked_at_s)
    if tools is None:
        tools = ToolContext(
            snapshot=visible, ltm=view, embedder=embedder, ocr=ocr, detector=detector
        )
    else:
        tools.snapshot = visible
        tools.ltm = view
    registry = registry or default_registry()
    prompt = system_prompt if system_prompt is not None else load_system_prompt()

    candidates = [visible.max_timestamp(), view.max_visible_end()]
    known = [c for c in candidates if c is not None]
    trajectory = Trajectory(
        question_id=question_id,
        question=question,
        asked_at_s=asked_at_s,
        max_visible_timestamp_s=max(known) if known else None,
    )
    for _ in range(max_turns):
        request = build_context(
            prompt,
            visible,
            question,
            asked_at_s,
            trajectory.turns,
            question_id=question_id,
            attach_images=attach_images,
        )
        try:
            text = policy.generate(request)
        except BackendError:
            trajectory.terminated_by = "policy_error"
            return trajectory
        action = parse_action(text)
        if isinstance(action, FinalAnswer):
            trajectory.turns.append(Turn(thought=text, action=action, observation=None))
            trajectory.final_answer = action.text
            trajectory.terminated_by = "answer"
            return trajectory
        if isinstance(action, ToolCall):
            observation = dispatch(registry, action, tools)
        else:
            observation = error_observation(
                "action_parser", "unparseable_action", UNPARSEABLE_MESSAGE
            )
        trajectory.turns.append(Turn(thought=text, action=action, observation=observation))
    trajectory.terminated_by = "max_turns"
    return trajectory
