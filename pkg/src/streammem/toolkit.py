"""Tool registry the agent calls into: memory search, OCR, object detection.

Dispatch is total: every syntactically valid call produces exactly one
Observation, and failures (bad arguments, unknown targets, backend errors)
become error Observations so an episode never aborts mid-turn. The
rendered_text formats are frozen; see docs/observation_formats.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import BackendError
from .frames import Frame
from .ltm import DEFAULT_MIN_SIMILARITY, DEFAULT_TOP_K, ArchivedEvent
from .stm import Snapshot

TOOL_SEARCH_MEMORY = "search_memory"
TOOL_OCR = "ocr"
TOOL_DETECT_OBJECTS = "detect_objects"


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {"type": "tool_call", "tool": self.tool_name, "arguments": self.arguments}


@dataclass(frozen=True)
class Detection:
    """One detected object in pixel coordinates."""

    label: str
    box: tuple[float, float, float, float]  # x0, y0, x1, y1
    score: float

    def __post_init__(self) -> None:
        x0, y0, x1, y1 = self.box
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate detection box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")

    def to_record(self) -> dict[str, Any]:
        return {"label": self.label, "box": list(self.box), "score": self.score}


@dataclass(frozen=True)
class ImageRef:
    """Target of an OCR/detection call: fixture identity plus whichever of
    in-memory pixels or an on-disk PNG is available."""

    image_id: str
    frame: Frame | None = None
    path: Path | None = None

    def png_bytes(self) -> bytes:
        import io

        from PIL import Image
        import numpy as np

        if self.frame is not None:
            arr = np.asarray(self.frame.pixels, dtype=np.uint8).reshape(
                self.frame.height, self.frame.width
            )
            buf = io.BytesIO()
            Image.fromarray(arr, mode="L").save(buf, format="PNG")
            return buf.getvalue()
        if self.path is not None:
            return Path(self.path).read_bytes()
        raise BackendError(f"no image data available for {self.image_id}")


@dataclass(frozen=True)
class Observation:
    """Result of one tool call in both structured and textual form."""

    tool_name: str
    status: str  # "ok" | "error"
    payload: dict[str, Any]
    rendered_text: str

    @property
    def error_code(self) -> str | None:
        return self.payload.get("code") if self.status == "error" else None

    def to_record(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "status": self.status,
            "payload": self.payload,
            "rendered_text": self.rendered_text,
        }


def error_observation(tool_name: str, code: str, message: str) -> Observation:
    return Observation(
        tool_name=tool_name,
        status="error",
        payload={"code": code, "message": message},
        rendered_text=message,
    )


@dataclass
class ToolContext:
    """Everything a tool may touch during one episode. The LTM handle may be
    a TimeBoundedLtmView so tools cannot surface future events."""

    snapshot: Snapshot
    ltm: Any
    embedder: Any
    ocr: Any
    detector: Any
    search_k: int = DEFAULT_TOP_K
    min_similarity: float = DEFAULT_MIN_SIMILARITY


ToolHandler = Callable[[dict[str, Any], ToolContext], Observation]


def _render_event_line(entry: ArchivedEvent) -> str:
    caption = entry.caption if entry.caption is not None else "(pending)"
    cfp = entry.change_from_previous if entry.change_from_previous is not None else "(none)"
    ctn = entry.change_to_next if entry.change_to_next is not None else "(none)"
    return (
        f"- event {entry.event_id} [{entry.start_s:.1f}s-{entry.end_s:.1f}s] "
        f"caption: {caption} | change_from_previous: {cfp} | change_to_next: {ctn}"
    )


def _event_payload(entry: ArchivedEvent, similarity: float | None = None) -> dict[str, Any]:
    payload = {
        "event_id": entry.event_id,
        "start_s": entry.start_s,
        "end_s": entry.end_s,
        "caption": entry.caption,
        "change_from_previous": entry.change_from_previous,
        "change_to_next": entry.change_to_next,
    }
    if similarity is not None:
        payload["similarity"] = similarity
    return payload


def tool_search_memory(args: dict[str, Any], ctx: ToolContext) -> Observation:
    """Either semantic (query) or temporal (start_time AND end_time) search
    over long-term memory, never both."""
    query = args.get("query")
    start = args.get("start_time")
    end = args.get("end_time")
    has_query = query is not None
    has_range = start is not None or end is not None
    if has_query and has_range:
        return error_observation(
            TOOL_SEARCH_MEMORY,
            "invalid_arguments",
            "search_memory takes either query or a time range, not both",
        )
    if not has_query and not has_range:
        return error_observation(
            TOOL_SEARCH_MEMORY,
            "invalid_arguments",
            "search_memory requires query or start_time and end_time",
        )
    if has_query:
        if not isinstance(query, str) or not query.strip():
            return error_observation(
                TOOL_SEARCH_MEMORY, "invalid_arguments", "query must be non-empty text"
            )
        hits = ctx.ltm.search_semantic(
            query, ctx.embedder, k=ctx.search_k, min_sim=ctx.min_similarity
        )
        events = [_event_payload(e, similarity=s) for e, s in hits]
        lines = [_render_event_line(e) for e, _ in hits]
    else:
        if start is None or end is None:
            return error_observation(
                TOOL_SEARCH_MEMORY,
                "invalid_arguments",
                "temporal search requires both start_time and end_time",
            )
        try:
            start_f, end_f = float(start), float(end)
        except (TypeError, ValueError):
            return error_observation(
                TOOL_SEARCH_MEMORY, "invalid_arguments", "start_time/end_time must be numbers"
            )
        if start_f > end_f:
            return error_observation(
                TOOL_SEARCH_MEMORY, "invalid_arguments", "start_time must not exceed end_time"
            )
        matches = ctx.ltm.search_temporal(start_f, end_f)[: ctx.search_k]
        events = [_event_payload(e) for e in matches]
        lines = [_render_event_line(e) for e in matches]
    text = "\n".join([f"Found {len(events)} event(s)."] + lines)
    return Observation(
        tool_name=TOOL_SEARCH_MEMORY,
        status="ok",
        payload={"events": events},
        rendered_text=text,
    )


def _resolve_target(
    tool_name: str, args: dict[str, Any], ctx: ToolContext, default_last_frame: bool
) -> ImageRef | Observation:
    """Map event_id/frame_index arguments to an ImageRef, or produce the
    error Observation describing why that failed."""
    event_id = args.get("event_id")
    frame_index = args.get("frame_index")
    if event_id is not None and frame_index is not None:
        return error_observation(
            tool_name, "invalid_arguments", "give event_id or frame_index, not both"
        )
    if event_id is None and frame_index is None:
        if not default_last_frame:
            return error_observation(
                tool_name, "invalid_arguments", "either event_id or frame_index is required"
            )
        if len(ctx.snapshot) == 0:
            return error_observation(
                tool_name, "target_not_found", "short-term memory is empty"
            )
        frame = ctx.snapshot[len(ctx.snapshot) - 1].frame
        return ImageRef(image_id=frame.image_id, frame=frame)
    if event_id is not None:
        try:
            eid = int(event_id)
        except (TypeError, ValueError):
            return error_observation(tool_name, "invalid_arguments", "event_id must be an integer")
        entry = ctx.ltm.get(eid)
        if entry is None:
            return error_observation(
                tool_name, "target_not_found", f"event {eid} not found in long-term memory"
            )
        path = None
        if hasattr(ctx.ltm, "anchor_png_path"):
            path = ctx.ltm.anchor_png_path(entry)
        if entry.anchor_frame is None and path is None:
            return error_observation(
                tool_name, "target_not_found", f"event {eid} has no anchor image available"
            )
        return ImageRef(image_id=entry.anchor_image_id, frame=entry.anchor_frame, path=path)
    try:
        idx = int(frame_index)
    except (TypeError, ValueError):
        return error_observation(tool_name, "invalid_arguments", "frame_index must be an integer")
    if idx < 0 or idx >= len(ctx.snapshot):
        return error_observation(
            tool_name,
            "target_not_found",
            f"frame index {idx} out of range (snapshot has {len(ctx.snapshot)} frames)",
        )
    frame = ctx.snapshot[idx].frame
    return ImageRef(image_id=frame.image_id, frame=frame)


def tool_ocr(args: dict[str, Any], ctx: ToolContext) -> Observation:
    """Extract text from an LTM anchor (event_id) or an STM frame
    (frame_index, snapshot position)."""
    target = _resolve_target(TOOL_OCR, args, ctx, default_last_frame=False)
    if isinstance(target, Observation):
        return target
    lines = list(ctx.ocr.extract_text(target))
    return Observation(
        tool_name=TOOL_OCR,
        status="ok",
        payload={"lines": lines},
        rendered_text="\n".join(lines),
    )


def tool_detect_objects(args: dict[str, Any], ctx: ToolContext) -> Observation:
    """Zero-shot detection for the given labels; defaults to the most recent
    short-term frame when no target is specified."""
    labels = args.get("labels")
    if not isinstance(labels, list) or not labels or not all(
        isinstance(l, str) and l for l in labels
    ):
        return error_observation(
            TOOL_DETECT_OBJECTS, "invalid_arguments", "labels must be a non-empty list of strings"
        )
    target = _resolve_target(TOOL_DETECT_OBJECTS, args, ctx, default_last_frame=True)
    if isinstance(target, Observation):
        return target
    detections = sorted(
        ctx.detector.detect(target, labels),
        key=lambda d: (-d.score, d.label, d.box),
    )
    lines = [
        f"{d.label} box=({d.box[0]:g},{d.box[1]:g},{d.box[2]:g},{d.box[3]:g}) score={d.score:.2f}"
        for d in detections
    ]
    return Observation(
        tool_name=TOOL_DETECT_OBJECTS,
        status="ok",
        payload={"detections": [d.to_record() for d in detections]},
        rendered_text="\n".join(lines) if lines else "no detections",
    )


def default_registry() -> dict[str, ToolHandler]:
    return {
        TOOL_SEARCH_MEMORY: tool_search_memory,
        TOOL_OCR: tool_ocr,
        TOOL_DETECT_OBJECTS: tool_detect_objects,
    }


def dispatch(registry: dict[str, ToolHandler], call: ToolCall, ctx: ToolContext) -> Observation:
    """Route a call to its tool; never raises."""
    handler = registry.get(call.tool_name)
    if handler is None:
        return error_observation(call.tool_name, "unknown_tool", f"unknown tool: {call.tool_name}")
    try:
        return handler(call.arguments, ctx)
    except BackendError as exc:
        return error_observation(call.tool_name, "backend_error", f"backend failure: {exc}")
    except Exception as exc:  # totality: tool bugs must not kill the episode
        return error_observation(
            call.tool_name, "internal_error", f"{type(exc).__name__}: {exc}"
        )
