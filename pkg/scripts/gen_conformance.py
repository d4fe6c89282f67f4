#!/usr/bin/env python3
"""Regenerate the shared protocol conformance fixtures.

Writes conformance/protocol_fixtures.json (endpoint request/response pairs
pinned byte-for-byte) and conformance/embed_corpus.json (text -> embedding
vectors from the in-process hash embedder). Both the in-process transport
and the external stub service must satisfy these fixtures exactly.
"""

import base64
import io
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from streammem.backends import CHANGE_LOG_PROMPT, MockEmbedder, MockTransport


def png_b64(array: np.ndarray, mode: str = "L") -> str:
    buf = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def build_images() -> dict[str, str]:
    gray_const = np.full((4, 4), 200, dtype=np.uint8)
    gray_ramp = np.arange(0, 24, dtype=np.uint8).reshape(4, 6) * 10
    rgb = np.zeros((3, 3, 3), dtype=np.uint8)
    rgb[..., 0] = 255  # pure red
    return {
        "gray_const_200": png_b64(gray_const),
        "gray_ramp": png_b64(gray_ramp),
        "rgb_red": png_b64(rgb, mode="RGB"),
    }


def build_cases(images: dict[str, str]) -> list[dict]:
    cases = [
        {"name": "healthz", "path": "/healthz", "request": {}},
        # /embed
        {"name": "embed_basic", "path": "/embed", "request": {"text": "abc"}},
        {
            "name": "embed_sentence",
            "path": "/embed",
            "request": {"text": "A woman slices a potato on a wooden cutting board."},
        },
        {"name": "embed_empty", "path": "/embed", "request": {"text": ""}},
        {"name": "embed_missing_text", "path": "/embed", "request": {}},
        {"name": "embed_non_string", "path": "/embed", "request": {"text": 7}},
        # /caption
        {
            "name": "caption_single_gray",
            "path": "/caption",
            "request": {
                "images": [images["gray_const_200"]],
                "start_s": 4.0,
                "end_s": 6.0,
                "event_id": 3,
            },
        },
        {
            "name": "caption_two_images_no_id",
            "path": "/caption",
            "request": {
                "images": [images["gray_const_200"], images["gray_ramp"]],
                "start_s": 0.0,
                "end_s": 9.5,
            },
        },
        {
            "name": "caption_rgb",
            "path": "/caption",
            "request": {"images": [images["rgb_red"]], "start_s": 1.0, "end_s": 2.0, "event_id": 0},
        },
        {
            "name": "caption_zero_images",
            "path": "/caption",
            "request": {"images": [], "start_s": 0.0, "end_s": 1.0},
        },
        {
            "name": "caption_missing_times",
            "path": "/caption",
            "request": {"images": [images["gray_const_200"]]},
        },
        {
            "name": "caption_bad_event_id",
            "path": "/caption",
            "request": {
                "images": [images["gray_const_200"]],
                "start_s": 0.0,
                "end_s": 1.0,
                "event_id": "three",
            },
        },
        {
            "name": "caption_invalid_image",
            "path": "/caption",
            "request": {"images": ["!!!not-base64!!!"], "start_s": 0.0, "end_s": 1.0},
        },
        # /ocr
        {"name": "ocr_gray", "path": "/ocr", "request": {"image": images["gray_const_200"]}},
        {"name": "ocr_ramp", "path": "/ocr", "request": {"image": images["gray_ramp"]}},
        {"name": "ocr_missing_image", "path": "/ocr", "request": {}},
        {"name": "ocr_undecodable", "path": "/ocr", "request": {"image": base64.b64encode(b"junk").decode()}},
        # /detect
        {
            "name": "detect_two_labels",
            "path": "/detect",
            "request": {"image": images["gray_ramp"], "labels": ["cat", "dog"]},
        },
        {
            "name": "detect_empty_labels",
            "path": "/detect",
            "request": {"image": images["gray_const_200"], "labels": []},
        },
        {
            "name": "detect_bad_labels",
            "path": "/detect",
            "request": {"image": images["gray_const_200"], "labels": ["ok", 5]},
        },
        # /chat
        {
            "name": "chat_default_reply",
            "path": "/chat",
            "request": {"messages": [{"role": "user", "content": "hello"}]},
        },
        {
            "name": "chat_change_log",
            "path": "/chat",
            "request": {
                "messages": [
                    {"role": "system", "content": CHANGE_LOG_PROMPT},
                    {
                        "role": "user",
                        "content": (
                            "Previous event: mock-event e0: mean-intensity 200, 3 frames, 0.0s-2.0s\n"
                            "Current event: mock-event e1: mean-intensity 90, 4 frames, 3.0s-6.0s"
                        ),
                    },
                ]
            },
        },
        {"name": "chat_empty_messages", "path": "/chat", "request": {"messages": []}},
        {
            "name": "chat_bad_message_shape",
            "path": "/chat",
            "request": {"messages": [{"role": "user"}]},
        },
        {"name": "unknown_endpoint", "path": "/nope", "request": {}},
    ]
    transport = MockTransport()
    for case in cases:
        status, body = transport.handle(case["path"], case["request"])
        case["expect_status"] = status
        if status == 200:
            case["expect_json"] = body
        else:
            case["expect_error_code"] = body["error"]["code"]
    return cases


def build_embed_corpus() -> list[dict]:
    embedder = MockEmbedder()
    words = [
        "door", "opens", "slowly", "woman", "knife", "potato", "board", "red", "car",
        "parked", "street", "sign", "says", "exit", "platform", "train", "arrives",
        "cat", "sleeping", "sofa", "counting", "boxes", "warehouse", "forklift",
    ]
    corpus = []
    for i in range(50):
        chunk = " ".join(words[(i + j) % len(words)] for j in range(3 + i % 5))
        text = f"sample {i}: {chunk}"
        corpus.append({"text": text, "embedding": [float(x) for x in embedder.embed(text)]})
    return corpus


def main() -> int:
    out_dir = Path(__file__).resolve().parent.parent / "conformance"
    out_dir.mkdir(exist_ok=True)
    images = build_images()
    payload = {"images": images, "cases": build_cases(images)}
    (out_dir / "protocol_fixtures.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out_dir / "embed_corpus.json").write_text(
        json.dumps(build_embed_corpus(), indent=2) + "\n"
    )
    print(f"wrote {out_dir / 'protocol_fixtures.json'}")
    print(f"wrote {out_dir / 'embed_corpus.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
