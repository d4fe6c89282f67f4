"""FastAPI application implementing the model-backend wire protocol.

Request validation is done by hand so malformed requests return the
protocol's 400 error JSON (FastAPI's default 422 would break clients).
Every endpoint resolves to either a loaded model or the stub; only the stub
is implemented, and the config seam rejects anything else up front.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import stub

MAX_IMAGE_BYTES = 4 * 1024 * 1024

ENDPOINTS = ("caption", "embed", "ocr", "detect", "chat")


class ConfigError(Exception):
    pass


@dataclass
class BackendConfig:
    """Model identifier per endpoint ("stub" is the only loadable one)."""

    models: dict[str, str] = field(default_factory=lambda: {name: "stub" for name in ENDPOINTS})
    host: str = "127.0.0.1"
    port: int = 8808
    max_image_bytes: int = MAX_IMAGE_BYTES
    timeout_s: float = 30.0

    def validate(self) -> None:
        for name in ENDPOINTS:
            model = self.models.get(name, "stub")
            if model != "stub":
                raise ConfigError(
                    f"endpoint /{name} requests model {model!r}; only 'stub' is available"
                )


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


async def _read_json_object(request: Request):
    try:
        payload = json.loads(await request.body())
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None
    return payload if isinstance(payload, dict) else None


def create_app(config: BackendConfig | None = None) -> FastAPI:
    config = config or BackendConfig()
    config.validate()
    app = FastAPI(title="streammem backend service", docs_url=None, redoc_url=None)

    def decode(b64) -> tuple[object | None, JSONResponse | None]:
        try:
            return stub.decode_png(b64, config.max_image_bytes), None
        except stub.ImageTooLarge:
            return None, _error(413, "image_too_large", "image exceeds the 4 MB cap")
        except stub.BadImage as exc:
            return None, _error(400, "invalid_image", str(exc))

    @app.get("/healthz")
    async def healthz():
        return {"ok": True}

    @app.post("/caption")
    async def caption(request: Request):
        payload = await _read_json_object(request)
        if payload is None:
            return _error(400, "invalid_request", "request body must be a JSON object")
        images = payload.get("images")
        if not isinstance(images, list) or not images:
            return _error(400, "invalid_request", "images must be a non-empty list")
        if not _is_number(payload.get("start_s")) or not _is_number(payload.get("end_s")):
            return _error(400, "invalid_request", "start_s and end_s must be numbers")
        event_id = payload.get("event_id")
        if event_id is not None and not isinstance(event_id, int):
            return _error(400, "invalid_request", "event_id must be an integer when present")
        decoded = []
        for b64 in images:
            img, err = decode(b64)
            if err is not None:
                return err
            decoded.append(img)
        text = stub.caption_images(
            decoded, float(payload["start_s"]), float(payload["end_s"]), event_id
        )
        return {"caption": text}

    @app.post("/embed")
    async def embed(request: Request):
        payload = await _read_json_object(request)
        if payload is None:
            return _error(400, "invalid_request", "request body must be a JSON object")
        text = payload.get("text")
        if not isinstance(text, str):
            return _error(400, "invalid_request", "text must be a string")
        return {"embedding": stub.embed_text(text)}

    @app.post("/ocr")
    async def ocr(request: Request):
        payload = await _read_json_object(request)
        if payload is None:
            return _error(400, "invalid_request", "request body must be a JSON object")
        img, err = decode(payload.get("image"))
        if err is not None:
            return err
        return {"lines": stub.ocr_lines(img)}

    @app.post("/detect")
    async def detect(request: Request):
        payload = await _read_json_object(request)
        if payload is None:
            return _error(400, "invalid_request", "request body must be a JSON object")
        labels = payload.get("labels")
        if not isinstance(labels, list) or not labels or not all(
            isinstance(l, str) and l for l in labels
        ):
            return _error(400, "invalid_request", "labels must be a non-empty list of strings")
        img, err = decode(payload.get("image"))
        if err is not None:
            return err
        return {"detections": stub.detections_for(img, labels)}

    @app.post("/chat")
    async def chat(request: Request):
        payload = await _read_json_object(request)
        if payload is None:
            return _error(400, "invalid_request", "request body must be a JSON object")
        messages = payload.get("messages")
        if not isinstance(messages, list) or not messages:
            return _error(400, "invalid_request", "messages must be a non-empty list")
        for msg in messages:
            if (
                not isinstance(msg, dict)
                or not isinstance(msg.get("role"), str)
                or not isinstance(msg.get("content"), str)
            ):
                return _error(
                    400, "invalid_request", "each message needs role and content strings"
                )
        images = payload.get("images", [])
        if not isinstance(images, list):
            return _error(400, "invalid_request", "images must be a list when present")
        for b64 in images:
            _, err = decode(b64)
            if err is not None:
                return err
        return {"text": stub.chat_reply(messages)}

    @app.exception_handler(404)
    async def not_found(request: Request, exc):
        return _error(404, "not_found", f"unknown endpoint {request.url.path}")

    @app.exception_handler(405)
    async def method_not_allowed(request: Request, exc):
        return _error(404, "not_found", f"unsupported method for {request.url.path}")

    return app
