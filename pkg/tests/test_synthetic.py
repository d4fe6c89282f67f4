import json

import numpy as np
import pytest

from streammem.errors import DataFormatError
from streammem.frames import load_frame_directory, sample_stream
from streammem.synthetic import (
    PlantedObject,
    SceneSpec,
    StreamSpec,
    iter_source_frames,
    perception_fixtures,
    write_stream,
)

SPEC = StreamSpec(
    scenes=(
        SceneSpec(duration_s=4, base_intensity=20, ocr_lines=("hello",)),
        SceneSpec(
            duration_s=3,
            base_intensity=200,
            noise_amplitude=2,
            objects=(PlantedObject(label="cat", box=(1, 1, 5, 5), score=0.9),),
        ),
    ),
    width=8,
    height=8,
    seed=11,
)


class TestGenerator:
    def test_deterministic(self):
        a = [sf.pixels.tolist() for sf in iter_source_frames(SPEC)]
        b = [sf.pixels.tolist() for sf in iter_source_frames(SPEC)]
        assert a == b

    def test_frame_counts_and_timestamps(self):
        frames = list(iter_source_frames(SPEC))
        assert len(frames) == 7
        assert [sf.timestamp_s for sf in frames] == [float(i) for i in range(7)]

    def test_boundaries(self):
        assert SPEC.boundaries() == [4]
        assert SPEC.scene_start_indices() == [0, 4]

    def test_noise_respects_amplitude(self):
        frames = list(iter_source_frames(SPEC))
        noisy = frames[4].pixels.astype(int)
        assert np.all(np.abs(noisy - 200) <= 2)
        assert np.all(frames[0].pixels == 20)

    def test_fixtures_cover_scene_frames(self):
        fixtures = perception_fixtures(SPEC)
        assert set(fixtures["images"]) == {f"{i:06d}" for i in range(7)}
        assert fixtures["images"]["000000"]["ocr_lines"] == ["hello"]
        assert fixtures["images"]["000004"]["detections"][0]["label"] == "cat"

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(duration_s=0, base_intensity=10)
        with pytest.raises(ValueError):
            SceneSpec(duration_s=1, base_intensity=300)
        with pytest.raises(DataFormatError):
            StreamSpec.from_dict({"scenes": [{"duration_s": "x"}]})


class TestWriteStream:
    def test_written_stream_loads_back(self, tmp_path):
        paths = write_stream(SPEC, tmp_path)
        frames = list(sample_stream(load_frame_directory(paths["frames_dir"])))
        assert len(frames) == 7
        originals = list(iter_source_frames(SPEC))
        for got, want in zip(frames, originals):
            assert got.pixels.tolist() == want.pixels.tolist()
            assert got.timestamp_s == want.timestamp_s

        boundaries = json.loads(paths["boundaries"].read_text())
        assert boundaries["boundaries"] == [4]
        fixtures = json.loads(paths["fixtures"].read_text())
        assert "000000" in fixtures["images"]
        spec_round = StreamSpec.from_file(paths["spec"])
        assert spec_round == SPEC

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text(json.dumps(SPEC.to_dict()))
        assert StreamSpec.from_file(path) == SPEC
