"""Structured long-term archive of evicted events.

Each archived event is a tuple of anchor image, caption, caption embedding,
time range, and change logs linking it to its neighbors. Retrieval is exact:
temporal overlap scan and top-k cosine similarity with a floor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    BackendError,
    DataFormatError,
    DegenerateInputError,
    DimensionError,
)
from .frames import Frame
from .stm import Event

DEFAULT_TOP_K = 3
DEFAULT_MIN_SIMILARITY = 0.3

ENTRIES_FILENAME = "entries.jsonl"
ANCHORS_DIRNAME = "anchors"


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b)) / (na * nb)


@dataclass
class ArchivedEvent:
    """One long-term entry. ``pending`` entries (backend was unavailable)
    stay retrievable by time but are skipped by semantic search until
    resolved."""

    event_id: int
    start_s: float
    end_s: float
    caption: str | None
    embedding: np.ndarray | None
    change_from_previous: str | None = None
    change_to_next: str | None = None
    anchor_image_id: str = ""
    anchor_path: str | None = None
    pending: bool = False
    anchor_missing: bool = False
    # in-memory only; dropped on persist (the PNG is the durable form)
    anchor_frame: Frame | None = field(default=None, repr=False, compare=False)

    def to_record(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "anchor_path": self.anchor_path,
            "anchor_image_id": self.anchor_image_id,
            "caption": self.caption,
            "embedding": None if self.embedding is None else [float(x) for x in self.embedding],
            "start_s": self.start_s,
            "end_s": self.end_s,
            "change_from_previous": self.change_from_previous,
            "change_to_next": self.change_to_next,
            "pending": self.pending,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ArchivedEvent":
        emb = rec.get("embedding")
        return cls(
            event_id=int(rec["event_id"]),
            start_s=float(rec["start_s"]),
            end_s=float(rec["end_s"]),
            caption=rec.get("caption"),
            embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
            change_from_previous=rec.get("change_from_previous"),
            change_to_next=rec.get("change_to_next"),
            anchor_image_id=rec.get("anchor_image_id") or "",
            anchor_path=rec.get("anchor_path"),
            pending=bool(rec.get("pending", False)),
        )


class LtmStore:
    """Append-only archive ordered by start time."""

    def __init__(
        self,
        embedding_dim: int | None = None,
        root: str | Path | None = None,
        autopersist: bool = False,
    ):
        self.embedding_dim = embedding_dim
        self.root = Path(root) if root is not None else None
        # autopersist rewrites entries.jsonl after every archive; replay
        # reconstructions keep it off so the run directory stays untouched
        self.autopersist = autopersist and self.root is not None
        self.entries: list[ArchivedEvent] = []

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, event_id: int) -> ArchivedEvent | None:
        for entry in self.entries:
            if entry.event_id == event_id:
                return entry
        return None

    @property
    def pending_entries(self) -> list[ArchivedEvent]:
        return [e for e in self.entries if e.pending]

    def _check_order(self, entry: ArchivedEvent) -> None:
        if self.entries:
            prev = self.entries[-1]
            if entry.event_id <= prev.event_id:
                raise ValueError(
                    f"event ids must be strictly increasing ({entry.event_id} after {prev.event_id})"
                )
            if entry.start_s < prev.end_s:
                raise ValueError(
                    f"time ranges must be ordered and non-overlapping "
                    f"({entry.start_s} starts before {prev.end_s})"
                )
        if entry.start_s > entry.end_s:
            raise ValueError(f"inverted time range [{entry.start_s}, {entry.end_s}]")

    def _check_dim(self, embedding: np.ndarray) -> None:
        if self.embedding_dim is None:
            self.embedding_dim = int(embedding.size)
        elif embedding.size != self.embedding_dim:
            raise DimensionError(
                f"embedding has dimension {embedding.size}, store expects {self.embedding_dim}"
            )

    def archive(self, event: Event, captioner, embedder) -> ArchivedEvent:
        """Caption, embed, and append an evicted event; backfills the
        predecessor's change_to_next before the new entry becomes visible.

        A backend failure defers the caption/embedding to the retry queue:
        the entry lands pending and keeps its time range and anchor.
        """
        if not event.held:
            raise ValueError("cannot archive an event with no held frames")
        anchor = event.held[0]  # earliest surviving held frame
        entry = ArchivedEvent(
            event_id=event.state.event_id,
            start_s=event.state.start_timestamp_s,
            end_s=event.state.last_timestamp_s,
            caption=None,
            embedding=None,
            anchor_image_id=anchor.image_id,
            anchor_frame=anchor,
            pending=True,
        )
        self._check_order(entry)
        prev = self.entries[-1] if self.entries else None
        try:
            caption = captioner.caption_event(
                event.held,
                event.state.start_timestamp_s,
                event.state.last_timestamp_s,
                event.state.event_id,
            )
            embedding = np.asarray(embedder.embed(caption), dtype=np.float64)
            self._check_dim(embedding)
            entry.caption = caption
            entry.embedding = embedding
            entry.pending = False
            if prev is not None and prev.caption is not None:
                change = captioner.describe_change(prev.caption, caption)
                entry.change_from_previous = change
                prev.change_to_next = change
        except BackendError:
            pass  # stays pending; retry_pending resolves it later
        self.entries.append(entry)
        if self.autopersist:
            self.persist()
        return entry

    def retry_pending(self, captioner, embedder) -> int:
        """Resolve pending entries in order; repairs change-log links with
        both neighbors where captions are now available. Returns the number
        resolved."""
        resolved = 0
        for i, entry in enumerate(self.entries):
            if not entry.pending:
                continue
            frames = [entry.anchor_frame] if entry.anchor_frame is not None else []
            if not frames:
                continue  # anchor pixels gone (e.g. after load); cannot caption
            try:
                caption = captioner.caption_event(
                    frames, entry.start_s, entry.end_s, entry.event_id
                )
                embedding = np.asarray(embedder.embed(caption), dtype=np.float64)
                self._check_dim(embedding)
                entry.caption = caption
                entry.embedding = embedding
                entry.pending = False
                prev = self.entries[i - 1] if i > 0 else None
                if prev is not None and prev.caption is not None:
                    change = captioner.describe_change(prev.caption, caption)
                    entry.change_from_previous = change
                    prev.change_to_next = change
                nxt = self.entries[i + 1] if i + 1 < len(self.entries) else None
                if nxt is not None and nxt.caption is not None:
                    change = captioner.describe_change(caption, nxt.caption)
                    nxt.change_from_previous = change
                    entry.change_to_next = change
                resolved += 1
            except BackendError:
                continue
        if resolved and self.autopersist:
            self.persist()
        return resolved

    def search_temporal(self, start_s: float, end_s: float) -> list[ArchivedEvent]:
        """Entries whose closed time range overlaps [start_s, end_s],
        ordered by start time."""
        if start_s > end_s:
            raise ValueError(f"inverted query range [{start_s}, {end_s}]")
        hits = [
            e
            for e in self.entries
            if max(e.start_s, start_s) <= min(e.end_s, end_s)
        ]
        return sorted(hits, key=lambda e: e.start_s)

    def semantic_scan(
        self,
        query_vec: np.ndarray,
        k: int = DEFAULT_TOP_K,
        min_sim: float = DEFAULT_MIN_SIMILARITY,
    ) -> list[tuple[ArchivedEvent, float]]:
        """Exact top-k scan over embedded entries with similarity strictly
        above ``min_sim``; ties broken toward the older event."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not -1.0 <= min_sim <= 1.0:
            raise ValueError(f"min_sim must be in [-1, 1], got {min_sim}")
        q = np.asarray(query_vec, dtype=np.float64)
        if float(np.linalg.norm(q)) == 0.0:
            return []
        scored: list[tuple[ArchivedEvent, float]] = []
        for entry in self.entries:
            if entry.pending or entry.embedding is None:
                continue
            if float(np.linalg.norm(entry.embedding)) == 0.0:
                continue
            sim = cosine_similarity(q, entry.embedding)
            if sim > min_sim:
                scored.append((entry, sim))
        scored.sort(key=lambda pair: (-pair[1], pair[0].event_id))
        return scored[:k]

    def search_semantic(
        self,
        query_text: str,
        embedder,
        k: int = DEFAULT_TOP_K,
        min_sim: float = DEFAULT_MIN_SIMILARITY,
    ) -> list[tuple[ArchivedEvent, float]]:
        return self.semantic_scan(np.asarray(embedder.embed(query_text)), k=k, min_sim=min_sim)

    # ------------------------------------------------------------------
    # persistence
    def persist(self, root: str | Path | None = None) -> Path:
        """Write entries.jsonl plus anchor PNGs under ``root``; floats keep
        full round-trip precision."""
        target = Path(root) if root is not None else self.root
        if target is None:
            raise ValueError("no persistence root configured")
        self.root = target
        target.mkdir(parents=True, exist_ok=True)
        anchors_dir = target / ANCHORS_DIRNAME
        anchors_dir.mkdir(exist_ok=True)
        for entry in self.entries:
            if entry.anchor_frame is not None and entry.anchor_path is None:
                entry.anchor_path = f"{ANCHORS_DIRNAME}/{entry.event_id}.png"
            if entry.anchor_frame is not None:
                png_path = target / entry.anchor_path
                if not png_path.exists():
                    _write_gray_png(entry.anchor_frame, png_path)
        tmp = target / (ENTRIES_FILENAME + ".tmp")
        with tmp.open("w") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry.to_record()) + "\n")
        tmp.replace(target / ENTRIES_FILENAME)
        return target

    @classmethod
    def load(cls, root: str | Path) -> "LtmStore":
        root = Path(root)
        entries_path = root / ENTRIES_FILENAME
        if not entries_path.is_file():
            raise DataFormatError(f"missing entries file: {entries_path}")
        store = cls(root=root)
        with entries_path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = ArchivedEvent.from_record(json.loads(line))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise DataFormatError(f"{entries_path} line {lineno}: {exc}") from exc
                if entry.anchor_path is not None and not (root / entry.anchor_path).is_file():
                    entry.anchor_missing = True
                if entry.embedding is not None:
                    store._check_dim(entry.embedding)
                store.entries.append(entry)
        return store

    def anchor_png_path(self, entry: ArchivedEvent) -> Path | None:
        if self.root is None or entry.anchor_path is None or entry.anchor_missing:
            return None
        return self.root / entry.anchor_path


class TimeBoundedLtmView:
    """Read-only facade hiding entries that end after ``max_timestamp_s``;
    enforces the online constraint during episodes."""

    def __init__(self, store: LtmStore, max_timestamp_s: float):
        self._store = store
        self.max_timestamp_s = max_timestamp_s

    @property
    def entries(self) -> list[ArchivedEvent]:
        return [e for e in self._store.entries if e.end_s <= self.max_timestamp_s]

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, event_id: int) -> ArchivedEvent | None:
        for entry in self.entries:
            if entry.event_id == event_id:
                return entry
        return None

    def search_temporal(self, start_s: float, end_s: float) -> list[ArchivedEvent]:
        return [
            e for e in self._store.search_temporal(start_s, end_s)
            if e.end_s <= self.max_timestamp_s
        ]

    def search_semantic(
        self,
        query_text: str,
        embedder,
        k: int = DEFAULT_TOP_K,
        min_sim: float = DEFAULT_MIN_SIMILARITY,
    ) -> list[tuple[ArchivedEvent, float]]:
        hits = self._store.search_semantic(query_text, embedder, k=len(self._store) or 1, min_sim=min_sim)
        visible = [(e, s) for e, s in hits if e.end_s <= self.max_timestamp_s]
        return visible[:k]

    def anchor_png_path(self, entry: ArchivedEvent) -> Path | None:
        return self._store.anchor_png_path(entry)

    def max_visible_end(self) -> float | None:
        ends = [e.end_s for e in self.entries]
        return max(ends) if ends else None


def _write_gray_png(frame: Frame, path: Path) -> None:
    from PIL import Image

    arr = np.asarray(frame.pixels, dtype=np.uint8).reshape(frame.height, frame.width)
    Image.fromarray(arr, mode="L").save(path)


def save_frame_png(frame: Frame, path: Path) -> None:
    _write_gray_png(frame, path)
