"""Run directories: ingest a stream into persisted memory state and rebuild
that state as of any ask time.

Layout of a run directory:

    RUN/meta.json                  config + frames dir + stream extent
    RUN/checkpoints/ckpt_%08d.json buffer state every N admitted frames
    RUN/ltm/entries.jsonl          archived events (+ anchors/*.png)
    RUN/stm_final.json             final buffer dump
    RUN/stats.json                 memory counters

Reconstruction loads the densest checkpoint at or before the ask time, then
re-admits the remaining frames; determinism of the admit path makes the
rebuilt state identical to the original run's state at that instant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ConfigError, DataFormatError
from .frames import Frame, load_frame_directory, sample_stream
from .ltm import ArchivedEvent, LtmStore
from .segmenter import (
    BoundaryPolicy,
    CorrelationBoundaryPolicy,
    FixedLengthBoundaryPolicy,
)
from .stm import AdmitOutcome, ShortTermMemory

META_FILENAME = "meta.json"
STATS_FILENAME = "stats.json"
CHECKPOINT_DIRNAME = "checkpoints"
LTM_DIRNAME = "ltm"
DEFAULT_CHECKPOINT_EVERY = 100


def fixed_length_segmenter(interval_s: float = 30.0) -> FixedLengthBoundaryPolicy:
    """Baseline segmentation policy: a boundary every ``interval_s`` seconds."""
    return FixedLengthBoundaryPolicy(interval_s=interval_s)


@dataclass(frozen=True)
class IngestConfig:
    k: int = 32
    delta: float = 0.2
    min_len: int = 8
    bins: int = 64
    seed: int = 0
    fps: float = 1.0
    policy: str = "event"  # "event" or "fixed:<seconds>"
    archive_on_boundary: bool = False
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 0 < self.delta <= 1:
            raise ConfigError(f"delta must be in (0, 1], got {self.delta}")
        if self.min_len < 1:
            raise ConfigError(f"min-len must be >= 1, got {self.min_len}")
        if self.min_len > self.k:
            raise ConfigError(
                f"min-len {self.min_len} exceeds capacity {self.k}; "
                "events could never split before overflowing the buffer"
            )
        if self.bins < 2 or 256 % self.bins != 0:
            raise ConfigError(f"bins must divide 256 evenly (and be >= 2), got {self.bins}")
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint-every must be >= 1, got {self.checkpoint_every}")
        self.boundary_policy()  # validates the policy string

    def boundary_policy(self) -> BoundaryPolicy:
        if self.policy == "event":
            return CorrelationBoundaryPolicy(delta=self.delta, min_len=self.min_len)
        if self.policy.startswith("fixed:"):
            try:
                interval = float(self.policy.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad fixed-length policy {self.policy!r}") from exc
            if interval <= 0:
                raise ConfigError(f"fixed-length interval must be positive, got {interval}")
            return fixed_length_segmenter(interval)
        raise ConfigError(f"unknown segmentation policy {self.policy!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "delta": self.delta,
            "min_len": self.min_len,
            "bins": self.bins,
            "seed": self.seed,
            "fps": self.fps,
            "policy": self.policy,
            "archive_on_boundary": self.archive_on_boundary,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IngestConfig":
        return cls(
            k=int(data["k"]),
            delta=float(data["delta"]),
            min_len=int(data["min_len"]),
            bins=int(data["bins"]),
            seed=int(data["seed"]),
            fps=float(data.get("fps", 1.0)),
            policy=str(data.get("policy", "event")),
            archive_on_boundary=bool(data.get("archive_on_boundary", False)),
            checkpoint_every=int(data.get("checkpoint_every", DEFAULT_CHECKPOINT_EVERY)),
        )


def ingest_frames(
    frames: Iterable[Frame],
    stm: ShortTermMemory,
    ltm: LtmStore,
    captioner,
    embedder,
    config: IngestConfig,
    on_admit: Callable[[int, Frame], None] | None = None,
) -> list[int]:
    """Drive the admit/archive loop over already-sampled frames; returns the
    stream indices at which boundaries fired."""
    boundary_indices: list[int] = []
    for frame in frames:
        result = stm.admit(frame)
        if result.outcome is AdmitOutcome.BOUNDARY_STARTED_NEW_EVENT:
            boundary_indices.append(frame.stream_index)
        for event in result.evicted_events:
            ltm.archive(event, captioner, embedder)
        if (
            config.archive_on_boundary
            and result.outcome is AdmitOutcome.BOUNDARY_STARTED_NEW_EVENT
            and len(stm.events) >= 2
        ):
            ltm.archive(stm.evict_oldest(), captioner, embedder)
        if on_admit is not None:
            on_admit(frame.stream_index, frame)
    return boundary_indices


@dataclass
class RunState:
    """Handle over a run directory."""

    run_dir: Path
    config: IngestConfig
    frames_dir: Path
    frame_count: int = 0
    stream_end_s: float | None = None
    boundaries: list[int] = field(default_factory=list)

    @property
    def ltm_dir(self) -> Path:
        return self.run_dir / LTM_DIRNAME

    def meta_dict(self) -> dict[str, Any]:
        frames = self.frames_dir
        try:
            frames = frames.relative_to(self.run_dir)
        except ValueError:
            pass
        return {
            "config": self.config.to_dict(),
            "frames_dir": str(frames),
            "frame_count": self.frame_count,
            "stream_end_s": self.stream_end_s,
            "boundaries": self.boundaries,
        }

    @classmethod
    def open(cls, run_dir: str | Path) -> "RunState":
        run_dir = Path(run_dir)
        meta_path = run_dir / META_FILENAME
        if not meta_path.is_file():
            raise DataFormatError(f"not a run directory (missing {meta_path})")
        try:
            meta = json.loads(meta_path.read_text())
            config = IngestConfig.from_dict(meta["config"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"corrupt run metadata {meta_path}: {exc}") from exc
        frames_dir = Path(meta["frames_dir"])
        if not frames_dir.is_absolute():
            frames_dir = run_dir / frames_dir
        return cls(
            run_dir=run_dir,
            config=config,
            frames_dir=frames_dir,
            frame_count=int(meta.get("frame_count", 0)),
            stream_end_s=meta.get("stream_end_s"),
            boundaries=list(meta.get("boundaries", [])),
        )


def run_ingest(
    frames_dir: str | Path,
    run_dir: str | Path,
    config: IngestConfig,
    captioner,
    embedder,
) -> RunState:
    """Ingest a frame directory into a fresh run directory."""
    config.validate()
    run_dir = Path(run_dir)
    frames_dir = Path(frames_dir)
    (run_dir / CHECKPOINT_DIRNAME).mkdir(parents=True, exist_ok=True)

    stm = ShortTermMemory(capacity=config.k, boundary_policy=config.boundary_policy(), seed=config.seed)
    ltm = LtmStore(root=run_dir / LTM_DIRNAME, autopersist=True)
    state = RunState(run_dir=run_dir, config=config, frames_dir=frames_dir)

    def checkpoint(count: int) -> None:
        payload = stm.checkpoint_state()
        payload["frames_admitted"] = count
        payload["ltm_len"] = len(ltm)
        path = run_dir / CHECKPOINT_DIRNAME / f"ckpt_{count:08d}.json"
        path.write_text(json.dumps(payload))

    admitted = 0
    last_ts: float | None = None

    def on_admit(index: int, frame: Frame) -> None:
        nonlocal admitted, last_ts
        admitted += 1
        last_ts = frame.timestamp_s
        if admitted % config.checkpoint_every == 0:
            checkpoint(admitted)

    frames = sample_stream(load_frame_directory(frames_dir), fps=config.fps, bin_count=config.bins)
    state.boundaries = ingest_frames(frames, stm, ltm, captioner, embedder, config, on_admit)
    if admitted % config.checkpoint_every != 0:
        checkpoint(admitted)
    if len(ltm) == 0:
        ltm.persist()  # ensure the store exists even when nothing was evicted
    state.frame_count = admitted
    state.stream_end_s = last_ts

    (run_dir / META_FILENAME).write_text(json.dumps(state.meta_dict(), indent=2) + "\n")
    (run_dir / "stm_final.json").write_text(json.dumps(stm.dump_state(), indent=2) + "\n")
    stats = stm.stats.to_dict()
    stats["ltm_entries"] = len(ltm)
    stats["stream_end_s"] = last_ts
    (run_dir / STATS_FILENAME).write_text(json.dumps(stats, indent=2) + "\n")
    return state


def _load_checkpoints(run_dir: Path) -> list[dict[str, Any]]:
    ckpt_dir = run_dir / CHECKPOINT_DIRNAME
    checkpoints = []
    for path in sorted(ckpt_dir.glob("ckpt_*.json")):
        try:
            checkpoints.append(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"corrupt checkpoint {path}: {exc}") from exc
    return checkpoints


def _prefix_store(run_dir: Path, length: int) -> LtmStore:
    """First ``length`` archived entries, with the dangling change link of
    the last one cleared (its successor had not archived yet)."""
    full = LtmStore.load(run_dir / LTM_DIRNAME)
    store = LtmStore(root=run_dir / LTM_DIRNAME, autopersist=False)
    store.embedding_dim = full.embedding_dim
    for entry in full.entries[:length]:
        store.entries.append(ArchivedEvent.from_record(entry.to_record()))
    if store.entries:
        store.entries[-1].change_to_next = None
    return store


@dataclass
class ReconstructedMemory:
    stm: ShortTermMemory
    ltm: LtmStore
    asked_at_s: float
    frames_replayed: int


def reconstruct_at(
    run_state: RunState,
    asked_at_s: float,
    captioner,
    embedder,
) -> ReconstructedMemory:
    """Rebuild STM + LTM exactly as they stood right after the last frame
    with timestamp <= asked_at_s was admitted."""
    config = run_state.config
    checkpoints = _load_checkpoints(run_state.run_dir)
    base = None
    for ckpt in checkpoints:
        ts = ckpt.get("last_timestamp")
        if ts is not None and ts <= asked_at_s:
            if base is None or ckpt["frames_admitted"] > base["frames_admitted"]:
                base = ckpt

    stm = ShortTermMemory(
        capacity=config.k, boundary_policy=config.boundary_policy(), seed=config.seed
    )
    if base is None:
        ltm = LtmStore(root=run_state.run_dir / LTM_DIRNAME, autopersist=False)
        skip_below = 0
        needed: dict[int, Frame] = {}
        needed_indices: set[int] = set()
    else:
        ltm = _prefix_store(run_state.run_dir, int(base["ltm_len"]))
        skip_below = int(base["frames_admitted"])
        needed_indices = {i for ev in base["events"] for i in ev["held"]}
        needed = {}

    replayed = 0
    frames = sample_stream(
        load_frame_directory(run_state.frames_dir), fps=config.fps, bin_count=config.bins
    )
    restored = base is None
    for frame in frames:
        if frame.stream_index < skip_below:
            if frame.stream_index in needed_indices:
                needed[frame.stream_index] = frame
            continue
        if not restored:
            stm.restore(base, needed)
            restored = True
        if frame.timestamp_s > asked_at_s:
            break
        ingest_frames([frame], stm, ltm, captioner, embedder, config)
        replayed += 1
    if not restored:
        stm.restore(base, needed)
    return ReconstructedMemory(stm=stm, ltm=ltm, asked_at_s=asked_at_s, frames_replayed=replayed)
