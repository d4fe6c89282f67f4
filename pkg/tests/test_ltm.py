import json
import math

import numpy as np
import pytest

from streammem.backends import MockCaptioner, MockEmbedder
from streammem.errors import BackendError, DataFormatError, DegenerateInputError, DimensionError
from streammem.ltm import LtmStore, TimeBoundedLtmView, cosine_similarity

from helpers import build_event, make_entry


class FlakyCaptioner(MockCaptioner):
    """Fails the first ``failures`` caption calls, then recovers."""

    def __init__(self, failures=1):
        self.failures = failures

    def caption_event(self, frames, start_s, end_s, event_id):
        if self.failures > 0:
            self.failures -= 1
            raise BackendError("captioner offline")
        return super().caption_event(frames, start_s, end_s, event_id)


class TestCosine:
    def test_identical_vectors(self):
        v = np.array([0.3, 0.7, 0.1])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_unit_vectors(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        # 32 / (sqrt(14)*sqrt(77)) evaluated independently
        got = cosine_similarity(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0]))
        assert got == pytest.approx(0.9746318461970762, abs=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity(np.ones(3), np.ones(4))


class TestArchive:
    def test_first_event_has_no_change_from_previous(self):
        store = LtmStore()
        entry = store.archive(build_event(0, 0.0, 2.0), MockCaptioner(), MockEmbedder())
        assert entry.change_from_previous is None
        assert entry.change_to_next is None

    def test_mock_caption_format_and_hash_embedding(self):
        # oracle: recompute the embedding with an inline FNV-1a implementation
        store = LtmStore()
        entry = store.archive(
            build_event(3, 4.0, 6.0, value=200, n_frames=3), MockCaptioner(), MockEmbedder()
        )
        assert entry.caption == "mock-event e3: mean-intensity 200, 3 frames, 4.0s-6.0s"

        def fnv(data):
            h = 14695981039346656037
            for byte in data:
                h ^= byte
                h = (h * 1099511628211) % (1 << 64)
            return h

        import re

        counts = [0.0] * 64
        for token in re.findall(r"[a-z0-9]+", entry.caption.casefold()):
            counts[fnv(token.encode()) % 64] += 1.0
        norm = math.sqrt(sum(c * c for c in counts))
        expected = [c / norm for c in counts]
        assert entry.embedding.tolist() == expected

    def test_backfill_change_to_next(self):
        store = LtmStore()
        a = store.archive(build_event(0, 0.0, 2.0, value=200), MockCaptioner(), MockEmbedder())
        assert a.change_to_next is None
        b = store.archive(build_event(1, 3.0, 5.0, value=90), MockCaptioner(), MockEmbedder())
        assert a.change_to_next == "intensity 200 -> 90"
        assert b.change_from_previous == "intensity 200 -> 90"
        assert b.change_to_next is None

    def test_backend_failure_defers_to_pending(self):
        store = LtmStore()
        captioner = FlakyCaptioner(failures=1)
        embedder = MockEmbedder()
        entry = store.archive(build_event(0, 0.0, 2.0), captioner, embedder)
        assert entry.pending
        assert entry.caption is None
        # retrievable by time, invisible to semantics
        assert store.search_temporal(0.0, 10.0) == [entry]
        assert store.search_semantic("mock-event", embedder) == []
        resolved = store.retry_pending(captioner, embedder)
        assert resolved == 1
        assert not entry.pending
        assert entry.caption is not None
        assert store.search_semantic("mock-event", embedder) != []

    def test_retry_repairs_change_chain(self):
        store = LtmStore()
        captioner = FlakyCaptioner(failures=1)
        embedder = MockEmbedder()
        a = store.archive(build_event(0, 0.0, 2.0, value=200), captioner, embedder)  # fails
        b = store.archive(build_event(1, 3.0, 5.0, value=90), captioner, embedder)  # works
        assert a.pending and not b.pending
        assert b.change_from_previous is None  # predecessor had no caption yet
        store.retry_pending(captioner, embedder)
        assert a.change_to_next == "intensity 200 -> 90"
        assert b.change_from_previous == "intensity 200 -> 90"

    def test_empty_event_rejected(self):
        store = LtmStore()
        event = build_event(0, 0.0, 1.0)
        event.held = []
        with pytest.raises(ValueError):
            store.archive(event, MockCaptioner(), MockEmbedder())

    def test_order_enforced(self):
        store = LtmStore()
        store.archive(build_event(1, 5.0, 8.0), MockCaptioner(), MockEmbedder())
        with pytest.raises(ValueError):
            store.archive(build_event(0, 9.0, 10.0), MockCaptioner(), MockEmbedder())
        with pytest.raises(ValueError):
            store.archive(build_event(2, 1.0, 2.0), MockCaptioner(), MockEmbedder())

    def test_anchor_is_first_held_frame(self):
        event = build_event(0, 0.0, 4.0, n_frames=5)
        store = LtmStore()
        entry = store.archive(event, MockCaptioner(), MockEmbedder())
        assert entry.anchor_frame is event.held[0]
        assert entry.anchor_image_id == event.held[0].image_id


class TestTemporalSearch:
    def test_boundary_touch_under_closed_intervals(self):
        store = LtmStore()
        store.entries = [
            make_entry(0, 0.0, 10.0, [1.0]),
            make_entry(1, 10.0, 20.0, [1.0]),
            make_entry(2, 20.0, 30.0, [1.0]),
        ]
        hits = store.search_temporal(10.0, 10.0)
        assert [e.event_id for e in hits] == [0, 1]

    def test_beyond_all_entries_empty(self):
        store = LtmStore()
        store.entries = [make_entry(0, 0.0, 10.0, [1.0])]
        assert store.search_temporal(100.0, 200.0) == []

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError):
            LtmStore().search_temporal(5.0, 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        store = LtmStore()
        cursor = 0.0
        for i in range(200):
            start = cursor + float(rng.uniform(0.0, 2.0))
            end = start + float(rng.uniform(0.0, 5.0))
            store.entries.append(make_entry(i, start, end, [1.0]))
            cursor = end
        for _ in range(50):
            q0 = float(rng.uniform(0.0, cursor))
            q1 = q0 + float(rng.uniform(0.0, 30.0))
            expected = [
                e.event_id
                for e in store.entries
                if max(e.start_s, q0) <= min(e.end_s, q1)  # brute-force scan
            ]
            got = [e.event_id for e in store.search_temporal(q0, q1)]
            assert got == expected


class TestSemanticSearch:
    def test_identical_caption_full_similarity(self):
        embedder = MockEmbedder()
        store = LtmStore()
        caption = "a woman slices a potato on a wooden board"
        store.entries = [make_entry(0, 0.0, 1.0, embedder.embed(caption), caption=caption)]
        hits = store.search_semantic(caption, embedder)
        assert len(hits) == 1
        assert hits[0][0].event_id == 0
        assert hits[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_threshold_excludes_weak_matches(self):
        embedder = MockEmbedder()
        store = LtmStore()
        store.entries = [
            make_entry(0, 0.0, 1.0, embedder.embed("completely unrelated words here"))
        ]
        assert store.search_semantic("orthogonal query tokens", embedder, min_sim=0.3) == []

    def test_all_below_threshold_empty(self):
        store = LtmStore()
        v = np.zeros(4)
        v[0] = 1.0
        store.entries = [make_entry(0, 0.0, 1.0, v)]
        w = np.zeros(4)
        w[1] = 1.0
        assert store.semantic_scan(w, k=3, min_sim=0.3) == []

    def test_tie_breaks_toward_older_event(self):
        store = LtmStore()
        v = np.array([1.0, 0.0])
        store.entries = [
            make_entry(0, 0.0, 1.0, v),
            make_entry(1, 2.0, 3.0, v),
            make_entry(2, 4.0, 5.0, v),
        ]
        hits = store.semantic_scan(v, k=2, min_sim=0.3)
        assert [e.event_id for e, _ in hits] == [0, 1]

    def test_pending_entries_skipped(self):
        store = LtmStore()
        store.entries = [
            make_entry(0, 0.0, 1.0, pending=True),
            make_entry(1, 2.0, 3.0, [1.0, 0.0]),
        ]
        hits = store.semantic_scan(np.array([1.0, 0.0]), k=3, min_sim=0.0)
        assert [e.event_id for e, _ in hits] == [1]

    def test_empty_store(self):
        assert LtmStore().search_semantic("anything", MockEmbedder()) == []

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        dim = 16
        store = LtmStore(embedding_dim=dim)
        cursor = 0.0
        for i in range(200):
            vec = rng.normal(size=dim)
            if i % 17 == 0 and i > 0:  # plant exact ties
                vec = np.asarray(store.entries[i - 1].embedding).copy()
            store.entries.append(make_entry(i, cursor, cursor + 1.0, vec))
            cursor += 2.0
        for _ in range(20):
            q = rng.normal(size=dim)
            # brute-force oracle with math.fsum cosine, independent path
            scored = []
            for e in store.entries:
                dot = math.fsum(float(a) * float(b) for a, b in zip(q, e.embedding))
                na = math.sqrt(math.fsum(float(a) ** 2 for a in q))
                nb = math.sqrt(math.fsum(float(b) ** 2 for b in e.embedding))
                sim = dot / (na * nb)
                if sim > 0.3:
                    scored.append((e.event_id, sim))
            scored.sort(key=lambda p: (-p[1], p[0]))
            expected = [eid for eid, _ in scored[:3]]
            got = [e.event_id for e, _ in store.semantic_scan(q, k=3, min_sim=0.3)]
            assert got == expected


class TestPersistence:
    def test_round_trip_field_for_field(self, tmp_path):
        store = LtmStore()
        captioner, embedder = MockCaptioner(), MockEmbedder()
        store.archive(build_event(0, 0.0, 2.0, value=200), captioner, embedder)
        store.archive(build_event(1, 3.0, 5.0, value=90), captioner, embedder)
        store.archive(build_event(2, 6.0, 9.0, value=30), captioner, embedder)
        root = store.persist(tmp_path / "ltm")
        loaded = LtmStore.load(root)
        assert len(loaded) == 3
        for orig, back in zip(store.entries, loaded.entries):
            assert orig.to_record() == back.to_record()
        assert not any(e.anchor_missing for e in loaded.entries)
        assert (root / "anchors" / "0.png").is_file()

    def test_embeddings_bit_exact(self, tmp_path):
        store = LtmStore()
        rng = np.random.default_rng(0)
        for i in range(5):
            store.entries.append(make_entry(i, 2.0 * i, 2.0 * i + 1.0, rng.normal(size=8)))
        root = store.persist(tmp_path / "ltm")
        loaded = LtmStore.load(root)
        for orig, back in zip(store.entries, loaded.entries):
            assert np.array_equal(orig.embedding, back.embedding)

    def test_corrupt_line_names_line_number(self, tmp_path):
        root = tmp_path / "ltm"
        root.mkdir()
        good = json.dumps(make_entry(0, 0.0, 1.0, [1.0]).to_record())
        (root / "entries.jsonl").write_text(good + "\n{broken\n")
        with pytest.raises(DataFormatError, match="line 2"):
            LtmStore.load(root)

    def test_missing_anchor_marks_entry(self, tmp_path):
        store = LtmStore()
        store.archive(build_event(0, 0.0, 2.0), MockCaptioner(), MockEmbedder())
        root = store.persist(tmp_path / "ltm")
        (root / "anchors" / "0.png").unlink()
        loaded = LtmStore.load(root)
        assert loaded.entries[0].anchor_missing
        assert loaded.anchor_png_path(loaded.entries[0]) is None

    @pytest.mark.parametrize("seed", range(3))
    def test_randomized_round_trip(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        store = LtmStore()
        cursor = 0.0
        for i in range(int(rng.integers(1, 40))):
            pending = bool(rng.random() < 0.15)
            entry = make_entry(
                i,
                cursor,
                cursor + float(rng.uniform(0.5, 3.0)),
                None if pending else rng.normal(size=16),
                caption=f"caption {i} with tokens {rng.integers(0, 100)}",
                pending=pending,
            )
            if not pending and rng.random() < 0.5:
                entry.change_from_previous = f"shift {i}"
            store.entries.append(entry)
            cursor += 4.0
        root = store.persist(tmp_path / f"ltm{seed}")
        loaded = LtmStore.load(root)
        assert [e.to_record() for e in store.entries] == [e.to_record() for e in loaded.entries]


class TestTimeBoundedView:
    def test_hides_future_entries(self):
        embedder = MockEmbedder()
        store = LtmStore()
        caption = "shared tokens appear in both captions"
        store.entries = [
            make_entry(0, 0.0, 5.0, embedder.embed(caption), caption=caption),
            make_entry(1, 6.0, 12.0, embedder.embed(caption), caption=caption),
        ]
        view = TimeBoundedLtmView(store, max_timestamp_s=5.0)
        assert [e.event_id for e in view.entries] == [0]
        assert view.get(1) is None
        assert [e.event_id for e in view.search_temporal(0.0, 100.0)] == [0]
        hits = view.search_semantic(caption, embedder)
        assert [e.event_id for e, _ in hits] == [0]
        assert view.max_visible_end() == 5.0
