"""Deterministic piecewise synthetic streams for tests and benchmarks.

A stream spec is a list of scenes (duration, base intensity, noise
amplitude, optional planted OCR text and detection boxes). Scenes with
well-separated intensities produce near-orthogonal histograms, giving
ground-truth boundaries for segmentation checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import DataFormatError
from .frames import FRAME_FILE_PATTERN, META_FILENAME, SourceFrame


@dataclass(frozen=True)
class PlantedObject:
    label: str
    box: tuple[float, float, float, float]
    score: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"label": self.label, "box": list(self.box), "score": self.score}


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float
    base_intensity: int
    noise_amplitude: int = 0
    ocr_lines: tuple[str, ...] = ()
    objects: tuple[PlantedObject, ...] = ()

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError(f"scene duration must be positive, got {self.duration_s}")
        if not 0 <= self.base_intensity <= 255:
            raise ValueError(f"base intensity must be a byte, got {self.base_intensity}")
        if self.noise_amplitude < 0:
            raise ValueError("noise amplitude must be non-negative")


@dataclass(frozen=True)
class StreamSpec:
    scenes: tuple[SceneSpec, ...]
    width: int = 64
    height: int = 64
    fps: float = 1.0
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StreamSpec":
        try:
            scenes = tuple(
                SceneSpec(
                    duration_s=float(s["duration_s"]),
                    base_intensity=int(s["base_intensity"]),
                    noise_amplitude=int(s.get("noise_amplitude", 0)),
                    ocr_lines=tuple(s.get("ocr_lines", [])),
                    objects=tuple(
                        PlantedObject(
                            label=o["label"], box=tuple(o["box"]), score=float(o.get("score", 1.0))
                        )
                        for o in s.get("objects", [])
                    ),
                )
                for s in data["scenes"]
            )
            return cls(
                scenes=scenes,
                width=int(data.get("width", 64)),
                height=int(data.get("height", 64)),
                fps=float(data.get("fps", 1.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"invalid stream spec: {exc}") from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "StreamSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read stream spec {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "width": self.width,
            "height": self.height,
            "fps": self.fps,
            "seed": self.seed,
            "scenes": [
                {
                    "duration_s": s.duration_s,
                    "base_intensity": s.base_intensity,
                    "noise_amplitude": s.noise_amplitude,
                    "ocr_lines": list(s.ocr_lines),
                    "objects": [o.to_dict() for o in s.objects],
                }
                for s in self.scenes
            ],
        }

    def frames_per_scene(self) -> list[int]:
        return [max(1, int(round(s.duration_s * self.fps))) for s in self.scenes]

    def total_frames(self) -> int:
        return sum(self.frames_per_scene())

    def scene_start_indices(self) -> list[int]:
        """Native frame index at which each scene begins."""
        starts = []
        cursor = 0
        for count in self.frames_per_scene():
            starts.append(cursor)
            cursor += count
        return starts

    def boundaries(self) -> list[int]:
        """Ground-truth boundary frame indices (scene starts after the first)."""
        return self.scene_start_indices()[1:]


def iter_source_frames(spec: StreamSpec, with_paths: bool = False) -> Iterator[SourceFrame]:
    """Generate the native frame sequence; fully determined by the stream
    description (scene list + seed)."""
    rng = np.random.default_rng(spec.seed)
    size = spec.width * spec.height
    index = 0
    for scene, count in zip(spec.scenes, spec.frames_per_scene()):
        for _ in range(count):
            if scene.noise_amplitude > 0:
                noise = rng.integers(
                    -scene.noise_amplitude, scene.noise_amplitude + 1, size, dtype=np.int64
                )
                pixels = np.clip(scene.base_intensity + noise, 0, 255).astype(np.uint8)
            else:
                pixels = np.full(size, scene.base_intensity, dtype=np.uint8)
            yield SourceFrame(
                timestamp_s=index / spec.fps,
                width=spec.width,
                height=spec.height,
                pixels=pixels,
                channels=1,
                source_path=FRAME_FILE_PATTERN.format(index) if with_paths else None,
            )
            index += 1


def perception_fixtures(spec: StreamSpec) -> dict[str, Any]:
    """Fixture mapping keyed by the zero-padded image stem of each frame."""
    images: dict[str, Any] = {}
    index = 0
    for scene, count in zip(spec.scenes, spec.frames_per_scene()):
        for _ in range(count):
            if scene.ocr_lines or scene.objects:
                images[f"{index:06d}"] = {
                    "ocr_lines": list(scene.ocr_lines),
                    "detections": [o.to_dict() for o in scene.objects],
                }
            index += 1
    return {"images": images}


def write_stream(spec: StreamSpec, out_dir: str | Path) -> dict[str, Path]:
    """Materialize frames/, the sidecar metadata, perception fixtures, and
    the ground-truth boundaries file."""
    from PIL import Image

    out = Path(out_dir)
    frames_dir = out / "frames"
    fixtures_dir = out / "fixtures"
    frames_dir.mkdir(parents=True, exist_ok=True)
    fixtures_dir.mkdir(parents=True, exist_ok=True)

    with (frames_dir / META_FILENAME).open("w") as meta:
        for index, sf in enumerate(iter_source_frames(spec)):
            arr = np.asarray(sf.pixels, dtype=np.uint8).reshape(spec.height, spec.width)
            Image.fromarray(arr, mode="L").save(frames_dir / FRAME_FILE_PATTERN.format(index))
            meta.write(json.dumps({"index": index, "timestamp_s": sf.timestamp_s}) + "\n")

    fixtures_path = fixtures_dir / "perception.json"
    fixtures_path.write_text(json.dumps(perception_fixtures(spec), indent=2) + "\n")

    boundaries_path = out / "boundaries.json"
    boundaries_path.write_text(
        json.dumps(
            {
                "boundaries": spec.boundaries(),
                "scene_start_indices": spec.scene_start_indices(),
            },
            indent=2,
        )
        + "\n"
    )
    spec_path = out / "stream_spec.json"
    spec_path.write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return {
        "frames_dir": frames_dir,
        "fixtures": fixtures_path,
        "boundaries": boundaries_path,
        "spec": spec_path,
    }
