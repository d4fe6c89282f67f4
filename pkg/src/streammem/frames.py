"""Frame ingestion: sampling, grayscale conversion, histograms, directory loading.

Incoming images are converted to grayscale on ingest and carry a normalized
histogram used by the boundary test downstream. The original image path is
retained so perception tools can reopen full-color sources.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .errors import DataFormatError, DegenerateInputError, DimensionError, StreamOrderError

DEFAULT_BIN_COUNT = 64

FRAME_FILE_PATTERN = "{:06d}.png"
META_FILENAME = "meta.jsonl"


def format_seconds(t: float) -> str:
    """Timestamp rendering used in labels and captions ("12.5", "13.0")."""
    return f"{t:.1f}"


def frame_label(index: int, timestamp_s: float) -> str:
    return f"Frame {index} | {format_seconds(timestamp_s)}s"


@dataclass(frozen=True)
class Histogram:
    """Normalized grayscale histogram over ``bin_count`` equal-width bins."""

    bins: np.ndarray

    def __post_init__(self) -> None:
        bins = np.asarray(self.bins, dtype=np.float64)
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)
        if bins.ndim != 1 or bins.size < 1:
            raise DimensionError("histogram must be a non-empty 1-D vector")
        if np.any(bins < 0):
            raise ValueError("histogram bins must be non-negative")
        if abs(float(bins.sum()) - 1.0) > 1e-9:
            raise ValueError("histogram bins must sum to 1 within 1e-9")

    @property
    def bin_count(self) -> int:
        return int(self.bins.size)


@dataclass(frozen=True)
class Frame:
    """One sampled grayscale frame with its stream position and histogram."""

    stream_index: int
    timestamp_s: float
    width: int
    height: int
    pixels: np.ndarray
    histogram: Histogram
    source_path: str | None = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.uint8)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        if px.size != self.width * self.height:
            raise DimensionError(
                f"pixel buffer has {px.size} bytes, expected {self.width}x{self.height}"
            )
        if self.timestamp_s < 0 or self.stream_index < 0:
            raise ValueError("stream_index and timestamp_s must be non-negative")

    @property
    def label(self) -> str:
        return frame_label(self.stream_index, self.timestamp_s)

    @property
    def image_id(self) -> str:
        """Stable identity used to key perception fixtures."""
        if self.source_path is not None:
            return Path(self.source_path).stem
        return str(self.stream_index)

    def mean_intensity(self) -> float:
        return float(int(self.pixels.sum(dtype=np.int64)) / self.pixels.size)


@dataclass(frozen=True)
class SourceFrame:
    """A native (pre-sampling) frame as produced by a loader or generator."""

    timestamp_s: float
    width: int
    height: int
    pixels: np.ndarray  # u8, len w*h (grayscale) or 3*w*h (interleaved RGB)
    channels: int = 1
    source_path: str | None = None


def to_grayscale(rgb_pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """Collapse an interleaved 8-bit RGB buffer to grayscale via luma weights."""
    rgb = np.asarray(rgb_pixels, dtype=np.uint8).reshape(-1)
    if rgb.size != 3 * width * height:
        raise DimensionError(
            f"RGB buffer has {rgb.size} bytes, expected 3x{width}x{height}"
        )
    return _kernels.grayscale_from_rgb(rgb)


def histogram_of(pixels: np.ndarray, bin_count: int = DEFAULT_BIN_COUNT) -> Histogram:
    """Histogram of a raw grayscale buffer (shared by frame construction)."""
    px = np.asarray(pixels, dtype=np.uint8).reshape(-1)
    if px.size == 0:
        raise DegenerateInputError("cannot histogram a zero-pixel frame")
    if bin_count <= 0 or 256 % bin_count != 0:
        raise ValueError(f"bin_count must divide 256 evenly, got {bin_count}")
    return Histogram(_kernels.histogram_u8(px, bin_count))


def compute_histogram(frame: Frame, bin_count: int = DEFAULT_BIN_COUNT) -> Histogram:
    return histogram_of(frame.pixels, bin_count)


def make_frame(
    stream_index: int,
    timestamp_s: float,
    width: int,
    height: int,
    gray_pixels: np.ndarray,
    bin_count: int = DEFAULT_BIN_COUNT,
    source_path: str | None = None,
) -> Frame:
    return Frame(
        stream_index=stream_index,
        timestamp_s=timestamp_s,
        width=width,
        height=height,
        pixels=gray_pixels,
        histogram=histogram_of(gray_pixels, bin_count),
        source_path=source_path,
    )


def sample_stream(
    source: Iterable[SourceFrame],
    fps: float = 1.0,
    bin_count: int = DEFAULT_BIN_COUNT,
) -> Iterator[Frame]:
    """Downsample a native stream to ``fps``, emitting the first frame that
    enters each 1/fps-second window.

    Grayscale conversion and histogram computation run only on selected
    frames. Source timestamps must be non-decreasing.
    """
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    last_ts = -math.inf
    last_window = -1
    stream_index = 0
    for sf in source:
        if sf.timestamp_s < last_ts:
            raise StreamOrderError(
                f"source timestamp went backwards: {sf.timestamp_s} after {last_ts}"
            )
        last_ts = sf.timestamp_s
        window = math.floor(sf.timestamp_s * fps)
        if window <= last_window:
            continue
        last_window = window
        if sf.channels == 3:
            gray = to_grayscale(sf.pixels, sf.width, sf.height)
        elif sf.channels == 1:
            gray = np.asarray(sf.pixels, dtype=np.uint8).reshape(-1)
        else:
            raise DimensionError(f"unsupported channel count {sf.channels}")
        yield make_frame(
            stream_index,
            sf.timestamp_s,
            sf.width,
            sf.height,
            gray,
            bin_count=bin_count,
            source_path=sf.source_path,
        )
        stream_index += 1


def load_frame_directory(path: str | Path, pattern: str = "*.png") -> Iterator[SourceFrame]:
    """Yield native frames from ``path`` in sidecar order.

    Layout: image files named with zero-padded indices plus ``meta.jsonl``
    with one ``{"index": int, "timestamp_s": float}`` line per frame. The
    sidecar timestamps are authoritative.
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(path)
    meta_path = root / META_FILENAME
    if not meta_path.is_file():
        raise DataFormatError(f"missing sidecar metadata file: {meta_path}")
    records = []
    with meta_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append((int(rec["index"]), float(rec["timestamp_s"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{meta_path} line {lineno}: {exc}") from exc
    records.sort(key=lambda r: r[0])

    for index, timestamp_s in records:
        file_path = root / FRAME_FILE_PATTERN.format(index)
        if not file_path.is_file():
            matches = sorted(root.glob(pattern))
            named = [p for p in matches if p.stem == f"{index:06d}"]
            if not named:
                raise DataFormatError(f"frame image missing for index {index}: {file_path}")
            file_path = named[0]
        try:
            with Image.open(file_path) as img:
                if img.mode == "L":
                    arr = np.asarray(img, dtype=np.uint8)
                    channels = 1
                else:
                    arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
                    channels = 3
        except (OSError, UnidentifiedImageError) as exc:
            raise DataFormatError(f"unreadable image {file_path}: {exc}") from exc
        height, width = arr.shape[0], arr.shape[1]
        yield SourceFrame(
            timestamp_s=timestamp_s,
            width=width,
            height=height,
            pixels=arr.reshape(-1),
            channels=channels,
            source_path=str(file_path),
        )
