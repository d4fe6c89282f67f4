"""Deterministic stub models for the wire protocol.

Independent implementation of the algorithms documented in the client
repository's docs/protocol.md: the conformance fixture suite holds both
sides to the same bytes. Do not import the client package here.
"""

from __future__ import annotations

import base64
import binascii
import io
import math
import re
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

EMBEDDING_DIM = 64

CHANGE_LOG_PROMPT = (
    "You compare two consecutive video events. "
    "Reply with one short line describing how the first transitions to the second."
)
DEFAULT_CHAT_REPLY = "\\boxed{stub-answer}"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TOKEN_RE = re.compile(r"[a-z0-9]+")
_INTENSITY_RE = re.compile(r"mean-intensity (\d+)")


class ImageTooLarge(ValueError):
    pass


class BadImage(ValueError):
    pass


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def embed_text(text: str, dim: int = EMBEDDING_DIM) -> list[float]:
    """Bag of casefolded [a-z0-9]+ tokens, FNV-1a 64 hashed into ``dim``
    buckets, L2-normalized; token-free text embeds to all zeros."""
    counts = [0.0] * dim
    for token in _TOKEN_RE.findall(text.casefold()):
        counts[fnv1a64(token.encode("utf-8")) % dim] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    if norm == 0.0:
        return counts
    return [c / norm for c in counts]


def decode_png(b64_image: object, max_bytes: int) -> Image.Image:
    if not isinstance(b64_image, str):
        raise BadImage("image must be a base64 string")
    try:
        raw = base64.b64decode(b64_image, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadImage(f"invalid base64 image: {exc}") from exc
    if len(raw) > max_bytes:
        raise ImageTooLarge("image exceeds the size cap")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise BadImage(f"undecodable image: {exc}") from exc
    return img


def gray_stats(img: Image.Image) -> tuple[int, int]:
    arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return int(arr.sum(dtype=np.int64)), int(arr.size)


def rounded_mean(total: int, count: int) -> int:
    return int(math.floor(total / count + 0.5))


def caption_images(
    images: Sequence[Image.Image], start_s: float, end_s: float, event_id: int | None
) -> str:
    total = 0
    count = 0
    for img in images:
        s, c = gray_stats(img)
        total += s
        count += c
    m = rounded_mean(total, count)
    tag = f" e{event_id}" if event_id is not None else ""
    return f"mock-event{tag}: mean-intensity {m}, {len(images)} frames, {start_s:.1f}s-{end_s:.1f}s"


def ocr_lines(img: Image.Image) -> list[str]:
    s, c = gray_stats(img)
    return [f"stub-ocr: {img.width}x{img.height} mean-intensity {rounded_mean(s, c)}"]


def detections_for(img: Image.Image, labels: Sequence[str]) -> list[dict]:
    return [
        {"label": label, "box": [0, 0, img.width, img.height], "score": 0.5} for label in labels
    ]


def change_text(previous_caption: str, current_caption: str) -> str:
    prev = _INTENSITY_RE.search(previous_caption)
    curr = _INTENSITY_RE.search(current_caption)
    if prev and curr:
        return f"intensity {prev.group(1)} -> {curr.group(1)}"
    return f"caption change: '{previous_caption}' -> '{current_caption}'"


def chat_reply(messages: Sequence[dict]) -> str:
    if (
        messages
        and messages[0].get("role") == "system"
        and messages[0].get("content") == CHANGE_LOG_PROMPT
    ):
        user = messages[-1].get("content", "")
        if user.startswith("Previous event: ") and "\nCurrent event: " in user:
            prev, curr = user[len("Previous event: "):].split("\nCurrent event: ", 1)
            return change_text(prev, curr)
    return DEFAULT_CHAT_REPLY
