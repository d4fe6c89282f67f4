"""Model backends behind the perception and policy surfaces.

Three layers live here:

* deterministic in-process mocks (caption template, hash embedder,
  fixture-driven OCR/detection, scripted policy) used by ``--backend mock``;
* an HTTP client speaking the wire protocol in docs/protocol.md for
  ``--backend http``;
* ``MockTransport``, a request-level implementation of that protocol whose
  behavior the external stub service must reproduce byte-for-byte (pinned by
  the shared conformance fixtures).
"""

from __future__ import annotations

import base64
import binascii
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import BackendError, DataFormatError
from .frames import Frame
from .toolkit import Detection, ImageRef

MOCK_EMBEDDING_DIM = 64
MAX_IMAGE_BYTES = 4 * 1024 * 1024
DEFAULT_TIMEOUT_S = 30.0
BACKEND_URL_ENV = "STREAMMEM_BACKEND_URL"

CHANGE_LOG_PROMPT = (
    "You compare two consecutive video events. "
    "Reply with one short line describing how the first transitions to the second."
)
STUB_CHAT_REPLY = "\\boxed{stub-answer}"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TOKEN_RE = re.compile(r"[a-z0-9]+")
_INTENSITY_RE = re.compile(r"mean-intensity (\d+)")


# ----------------------------------------------------------------------
# documented deterministic algorithms (shared with the stub service)

def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_embedding(text: str, dim: int = MOCK_EMBEDDING_DIM) -> np.ndarray:
    """Bag-of-tokens embedding: casefolded [a-z0-9]+ tokens hashed by
    FNV-1a 64 into ``dim`` buckets, counts L2-normalized. Token-free text
    embeds to the zero vector."""
    counts = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.casefold()):
        counts[fnv1a64(token.encode("utf-8")) % dim] += 1.0
    norm = math.sqrt(float(np.dot(counts, counts)))
    if norm == 0.0:
        return counts
    return counts / norm


def rounded_mean_intensity(total: int, count: int) -> int:
    """Half-up integer rounding shared by every caption producer."""
    return int(math.floor(total / count + 0.5))


def caption_text(
    mean_intensity: int, frame_count: int, start_s: float, end_s: float, event_id: int | None
) -> str:
    tag = f" e{event_id}" if event_id is not None else ""
    return (
        f"mock-event{tag}: mean-intensity {mean_intensity}, "
        f"{frame_count} frames, {start_s:.1f}s-{end_s:.1f}s"
    )


def change_text(previous_caption: str, current_caption: str) -> str:
    """Mock change log: intensity transition when both captions carry one,
    otherwise a caption-to-caption fallback."""
    prev_m = _INTENSITY_RE.search(previous_caption)
    curr_m = _INTENSITY_RE.search(current_caption)
    if prev_m and curr_m:
        return f"intensity {prev_m.group(1)} -> {curr_m.group(1)}"
    return f"caption change: '{previous_caption}' -> '{current_caption}'"


# ----------------------------------------------------------------------
# in-process mocks

class MockEmbedder:
    def __init__(self, dim: int = MOCK_EMBEDDING_DIM):
        self.dimension = dim

    def embed(self, text: str) -> np.ndarray:
        return hash_embedding(text, self.dimension)


class MockCaptioner:
    def caption_event(
        self, frames: Sequence[Frame], start_s: float, end_s: float, event_id: int
    ) -> str:
        total = sum(int(f.pixels.sum(dtype=np.int64)) for f in frames)
        count = sum(f.pixels.size for f in frames)
        m = rounded_mean_intensity(total, count)
        return caption_text(m, len(frames), start_s, end_s, event_id)

    def describe_change(self, previous_caption: str, current_caption: str) -> str:
        return change_text(previous_caption, current_caption)


@dataclass
class PerceptionFixtures:
    """Canned OCR/detection outputs keyed by image id; unknown images yield
    empty results, not errors."""

    images: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "PerceptionFixtures":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read perception fixtures {path}: {exc}") from exc
        return cls(images=dict(data.get("images", {})))

    def ocr_lines(self, image_id: str) -> list[str]:
        return list(self.images.get(image_id, {}).get("ocr_lines", []))

    def detections(self, image_id: str) -> list[Detection]:
        out = []
        for rec in self.images.get(image_id, {}).get("detections", []):
            out.append(
                Detection(label=rec["label"], box=tuple(rec["box"]), score=float(rec["score"]))
            )
        return out


class MockOcr:
    def __init__(self, fixtures: PerceptionFixtures | None = None):
        self.fixtures = fixtures or PerceptionFixtures()

    def extract_text(self, ref: ImageRef) -> list[str]:
        return self.fixtures.ocr_lines(ref.image_id)


class MockDetector:
    def __init__(self, fixtures: PerceptionFixtures | None = None):
        self.fixtures = fixtures or PerceptionFixtures()

    def detect(self, ref: ImageRef, labels: Sequence[str]) -> list[Detection]:
        wanted = set(labels)
        return [d for d in self.fixtures.detections(ref.image_id) if d.label in wanted]


class ScriptedPolicy:
    """Replays canned policy outputs, keyed by question id with a shared
    default script; exhausted scripts return an empty (unparseable) turn."""

    def __init__(
        self,
        scripts: dict[str, list[str]] | None = None,
        default: list[str] | None = None,
    ):
        self.scripts = scripts or {}
        self.default = default or []
        self._cursors: dict[str, int] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedPolicy":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read scripted policy {path}: {exc}") from exc
        if isinstance(data, list):
            return cls(default=[str(x) for x in data])
        if isinstance(data, dict):
            scripts = {str(k): [str(x) for x in v] for k, v in data.get("questions", {}).items()}
            default = [str(x) for x in data.get("default", [])]
            return cls(scripts=scripts, default=default)
        raise DataFormatError(f"scripted policy {path} must be a JSON list or object")

    def generate(self, request) -> str:
        qid = str(getattr(request, "question_id", ""))
        script = self.scripts.get(qid, self.default)
        i = self._cursors.get(qid, 0)
        self._cursors[qid] = i + 1
        return script[i] if i < len(script) else ""


# ----------------------------------------------------------------------
# protocol helpers

def encode_frame_png(frame: Frame) -> str:
    return base64.b64encode(ImageRef(image_id=frame.image_id, frame=frame).png_bytes()).decode(
        "ascii"
    )


def _decode_png(b64_image: str, max_bytes: int = MAX_IMAGE_BYTES):
    """Decode a base64 PNG to a PIL image; raises ValueError('too_large')
    past the size cap and ValueError otherwise on malformed input."""
    from PIL import Image, UnidentifiedImageError

    if not isinstance(b64_image, str):
        raise ValueError("image must be a base64 string")
    try:
        raw = base64.b64decode(b64_image, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64 image: {exc}") from exc
    if len(raw) > max_bytes:
        raise ValueError("too_large")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"undecodable image: {exc}") from exc
    return img


def _image_gray_stats(img) -> tuple[int, int]:
    """(pixel sum, pixel count) of the PIL 'L' view; protocol-level
    grayscale uses PIL's conversion, documented in docs/protocol.md."""
    arr = np.asarray(img.convert("L"), dtype=np.uint8)
    return int(arr.sum(dtype=np.int64)), int(arr.size)


def stub_caption(
    images_b64: Sequence[str],
    start_s: float,
    end_s: float,
    event_id: int | None,
    max_bytes: int = MAX_IMAGE_BYTES,
) -> str:
    total = 0
    count = 0
    for b64 in images_b64:
        s, c = _image_gray_stats(_decode_png(b64, max_bytes))
        total += s
        count += c
    m = rounded_mean_intensity(total, count)
    return caption_text(m, len(images_b64), start_s, end_s, event_id)


def stub_ocr_lines(image_b64: str, max_bytes: int = MAX_IMAGE_BYTES) -> list[str]:
    img = _decode_png(image_b64, max_bytes)
    s, c = _image_gray_stats(img)
    return [f"stub-ocr: {img.width}x{img.height} mean-intensity {rounded_mean_intensity(s, c)}"]


def stub_detections(
    image_b64: str, labels: Sequence[str], max_bytes: int = MAX_IMAGE_BYTES
) -> list[dict[str, Any]]:
    img = _decode_png(image_b64, max_bytes)
    return [
        {"label": label, "box": [0, 0, img.width, img.height], "score": 0.5}
        for label in labels
    ]


def stub_chat(messages: Sequence[dict[str, str]]) -> str:
    if messages and messages[0].get("role") == "system" and messages[0].get("content") == CHANGE_LOG_PROMPT:
        user = messages[-1].get("content", "")
        if user.startswith("Previous event: ") and "\nCurrent event: " in user:
            prev, curr = user[len("Previous event: "):].split("\nCurrent event: ", 1)
            return change_text(prev, curr)
    return STUB_CHAT_REPLY


# ----------------------------------------------------------------------
# HTTP client for the wire protocol

class HttpBackend:
    """Client used for every backend role when ``--backend http`` is chosen.

    Any transport failure, timeout, or non-2xx response surfaces as
    BackendError, which the toolkit and archival layers convert to error
    observations / pending entries.
    """

    def __init__(
        self,
        base_url: str | None = None,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        client=None,
    ):
        import httpx

        base_url = base_url or os.environ.get(BACKEND_URL_ENV)
        if not base_url and client is None:
            raise BackendError(
                f"no backend URL configured (flag --backend-url or ${BACKEND_URL_ENV})"
            )
        self._client = client or httpx.Client(base_url=base_url, timeout=timeout_s)
        self._dimension: int | None = None

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        import httpx

        try:
            resp = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise BackendError(f"{path} request failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"{path} returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise BackendError(f"{path} returned non-JSON body") from exc

    # captioner role
    def caption_event(
        self, frames: Sequence[Frame], start_s: float, end_s: float, event_id: int
    ) -> str:
        payload = {
            "images": [encode_frame_png(f) for f in frames],
            "start_s": start_s,
            "end_s": end_s,
            "event_id": event_id,
        }
        return str(self._post("/caption", payload)["caption"])

    def describe_change(self, previous_caption: str, current_caption: str) -> str:
        payload = {
            "messages": [
                {"role": "system", "content": CHANGE_LOG_PROMPT},
                {
                    "role": "user",
                    "content": f"Previous event: {previous_caption}\nCurrent event: {current_caption}",
                },
            ]
        }
        return str(self._post("/chat", payload)["text"])

    # embedder role
    def embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self._post("/embed", {"text": text})["embedding"], dtype=np.float64)
        self._dimension = int(vec.size)
        return vec

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = int(self.embed("").size)
        return self._dimension

    # perception roles
    def extract_text(self, ref: ImageRef) -> list[str]:
        b64 = base64.b64encode(ref.png_bytes()).decode("ascii")
        return [str(line) for line in self._post("/ocr", {"image": b64})["lines"]]

    def detect(self, ref: ImageRef, labels: Sequence[str]) -> list[Detection]:
        b64 = base64.b64encode(ref.png_bytes()).decode("ascii")
        recs = self._post("/detect", {"image": b64, "labels": list(labels)})["detections"]
        return [
            Detection(label=r["label"], box=tuple(r["box"]), score=float(r["score"]))
            for r in recs
        ]

    # policy role
    def generate(self, request) -> str:
        payload = {"messages": request.messages, "images": request.images}
        return str(self._post("/chat", payload)["text"])


# ----------------------------------------------------------------------
# request-level mock transport (the behavior contract for the stub service)

def _error(status: int, code: str, message: str) -> tuple[int, dict[str, Any]]:
    return status, {"error": {"code": code, "message": message}}


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class MockTransport:
    """In-process implementation of the five protocol endpoints plus
    /healthz; the external service's stub mode must match it exactly."""

    def __init__(self, max_image_bytes: int = MAX_IMAGE_BYTES):
        self.max_image_bytes = max_image_bytes

    def handle(self, path: str, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        if path == "/healthz":
            return 200, {"ok": True}
        handlers = {
            "/caption": self._caption,
            "/embed": self._embed,
            "/ocr": self._ocr,
            "/detect": self._detect,
            "/chat": self._chat,
        }
        handler = handlers.get(path)
        if handler is None:
            return _error(404, "not_found", f"unknown endpoint {path}")
        if not isinstance(payload, dict):
            return _error(400, "invalid_request", "request body must be a JSON object")
        return handler(payload)

    def _decode(self, b64: Any) -> tuple[Any, tuple[int, dict[str, Any]] | None]:
        try:
            return _decode_png(b64, self.max_image_bytes), None
        except ValueError as exc:
            if str(exc) == "too_large":
                return None, _error(413, "image_too_large", "image exceeds the 4 MB cap")
            return None, _error(400, "invalid_image", str(exc))

    def _caption(self, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        images = payload.get("images")
        if not isinstance(images, list) or not images:
            return _error(400, "invalid_request", "images must be a non-empty list")
        if not _is_number(payload.get("start_s")) or not _is_number(payload.get("end_s")):
            return _error(400, "invalid_request", "start_s and end_s must be numbers")
        event_id = payload.get("event_id")
        if event_id is not None and not isinstance(event_id, int):
            return _error(400, "invalid_request", "event_id must be an integer when present")
        total = 0
        count = 0
        for b64 in images:
            img, err = self._decode(b64)
            if err is not None:
                return err
            s, c = _image_gray_stats(img)
            total += s
            count += c
        m = rounded_mean_intensity(total, count)
        caption = caption_text(
            m, len(images), float(payload["start_s"]), float(payload["end_s"]), event_id
        )
        return 200, {"caption": caption}

    def _embed(self, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        text = payload.get("text")
        if not isinstance(text, str):
            return _error(400, "invalid_request", "text must be a string")
        return 200, {"embedding": [float(x) for x in hash_embedding(text)]}

    def _ocr(self, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        img, err = self._decode(payload.get("image"))
        if err is not None:
            return err
        s, c = _image_gray_stats(img)
        line = f"stub-ocr: {img.width}x{img.height} mean-intensity {rounded_mean_intensity(s, c)}"
        return 200, {"lines": [line]}

    def _detect(self, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        labels = payload.get("labels")
        if not isinstance(labels, list) or not labels or not all(
            isinstance(l, str) and l for l in labels
        ):
            return _error(400, "invalid_request", "labels must be a non-empty list of strings")
        img, err = self._decode(payload.get("image"))
        if err is not None:
            return err
        detections = [
            {"label": label, "box": [0, 0, img.width, img.height], "score": 0.5}
            for label in labels
        ]
        return 200, {"detections": detections}

    def _chat(self, payload: dict[str, Any]) -> tuple[int, dict[str, Any]]:
        messages = payload.get("messages")
        if not isinstance(messages, list) or not messages:
            return _error(400, "invalid_request", "messages must be a non-empty list")
        for msg in messages:
            if (
                not isinstance(msg, dict)
                or not isinstance(msg.get("role"), str)
                or not isinstance(msg.get("content"), str)
            ):
                return _error(400, "invalid_request", "each message needs role and content strings")
        images = payload.get("images", [])
        if not isinstance(images, list):
            return _error(400, "invalid_request", "images must be a list when present")
        for b64 in images:
            _, err = self._decode(b64)
            if err is not None:
                return err
        return 200, {"text": stub_chat(messages)}


class TransportHttpClient:
    """httpx-free shim: lets HttpBackend run against a MockTransport in
    tests without sockets."""

    def __init__(self, transport: MockTransport):
        self._transport = transport

    def post(self, path: str, json: dict[str, Any]):
        status, body = self._transport.handle(path, json)
        return _ShimResponse(status, body)


class _ShimResponse:
    def __init__(self, status_code: int, body: dict[str, Any]):
        self.status_code = status_code
        self._body = body
        self.text = json.dumps(body)

    def json(self) -> dict[str, Any]:
        return self._body
