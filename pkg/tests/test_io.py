import json

import numpy as np
import pytest

from keytrack.io import (
    StreamHeader,
    default_skeleton,
    load_detections,
    load_scenario,
    load_skeleton,
    load_tracks,
    save_detections,
    save_scenario,
    save_skeleton,
    save_tracks,
    scenario_from_dict,
    scenario_to_dict,
    skeleton_from_dict,
    skeleton_to_dict,
)
from keytrack.keysort import KeySortTracker
from keytrack.simulate import RegimeSegment, ScenarioConfig, corrupt, generate

from conftest import make_pose


HEADER = StreamHeader(skeleton="cattle-dorsal", width=960, height=720)


class TestSkeletonConfig:
    def test_dict_round_trip(self, spec):
        recovered = skeleton_from_dict(skeleton_to_dict(spec))
        assert recovered == spec

    def test_file_round_trip(self, spec, tmp_path):
        path = tmp_path / "skeleton.yaml"
        save_skeleton(spec, str(path))
        assert load_skeleton(str(path)) == spec

    def test_training_only_flag_preserved(self, spec):
        data = skeleton_to_dict(spec)
        flagged = [c for c in data["connections"] if c.get("training_only")]
        assert flagged == [{"parent": "right_hip", "child": "left_hip", "training_only": True}]

    def test_default_skeleton_matches_bundle(self, spec):
        assert default_skeleton() == spec
        assert spec.name == "cattle-dorsal"

    def test_wrong_format_rejected(self, spec):
        data = skeleton_to_dict(spec)
        data["format"] = "something-else"
        with pytest.raises(ValueError, match="not a skeleton config"):
            skeleton_from_dict(data)

    def test_missing_field_reported(self, spec):
        data = skeleton_to_dict(spec)
        del data["root"]
        with pytest.raises(ValueError, match="missing field"):
            skeleton_from_dict(data)

    def test_invalid_structure_rejected(self, spec):
        data = skeleton_to_dict(spec)
        data["dominant"] = ["head->nose"]  # second-order connection
        with pytest.raises(ValueError):
            skeleton_from_dict(data)

    def test_non_mapping_file_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- just\n- a\n- list\n")
        with pytest.raises(ValueError, match="must be a mapping"):
            load_skeleton(str(path))


class TestScenarioConfig:
    def test_dict_round_trip(self):
        config = ScenarioConfig(
            n_animals=4,
            seed=17,
            regimes=(
                RegimeSegment("stationary", 20),
                RegimeSegment("walking", 30, velocity=(2.0, 0.5), process_noise=0.1),
            ),
            detection_noise={"nose": 3.0},
            dropout=0.15,
        )
        recovered = scenario_from_dict(scenario_to_dict(config))
        assert recovered == config

    def test_file_round_trip(self, tmp_path):
        config = ScenarioConfig(n_animals=2, seed=5)
        path = tmp_path / "scenario.yaml"
        save_scenario(config, str(path))
        assert load_scenario(str(path)) == config

    def test_partial_dict_uses_defaults(self):
        config = scenario_from_dict({"seed": 42})
        assert config.seed == 42
        assert config.n_animals == ScenarioConfig().n_animals

    def test_wrong_format_rejected(self):
        with pytest.raises(ValueError, match="not a scenario config"):
            scenario_from_dict({"format": "keytrack-skeleton"})


class TestDetectionsStream:
    def frames(self):
        return {
            0: [make_pose(withers=(10.5, 20.25), tail_implant=None)],
            1: [],
            2: [
                make_pose(frame_index=2, withers=(11.0, 20.0)),
                make_pose(frame_index=2, withers=(50.0, 60.0)),
            ],
        }

    def test_round_trip(self, tmp_path):
        path = tmp_path / "det.jsonl"
        save_detections(str(path), HEADER, self.frames(), regimes={0: "stationary"})
        header, frames, regimes = load_detections(str(path))
        assert header == HEADER
        assert set(frames) == {0, 1, 2}
        assert frames[1] == []
        assert frames[0][0].get("withers") == (10.5, 20.25)
        assert frames[0][0].get("tail_implant") is None
        assert frames[0][0].frame_index == 0
        assert len(frames[2]) == 2
        assert regimes == {0: "stationary"}

    def test_simulated_round_trip(self, spec, quiet_scenario, tmp_path):
        truth = generate(spec, quiet_scenario)
        detections = corrupt(truth, spec)
        path = tmp_path / "sim.jsonl"
        save_detections(
            str(path),
            StreamHeader("cattle-dorsal", quiet_scenario.width, quiet_scenario.height),
            detections,
            regimes={f.frame_index: f.regime for f in truth.frames},
        )
        _, frames, regimes = load_detections(str(path))
        assert set(frames) == set(detections)
        for frame_index, poses in detections.items():
            for original, loaded in zip(poses, frames[frame_index]):
                for cat in spec.categories:
                    assert loaded.get(cat) == pytest.approx(original.get(cat))
        assert all(r == "stationary" for r in regimes.values())

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty file"):
            load_detections(str(path))

    def test_header_format_checked(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps(
                {"format": "keytrack-tracks", "version": 1, "skeleton": "s", "width": 1, "height": 1}
            )
            + "\n"
        )
        with pytest.raises(ValueError, match="line 1: expected format"):
            load_detections(str(path))

    def test_header_version_checked(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps(
                {"format": "keytrack-detections", "version": 99, "skeleton": "s", "width": 1, "height": 1}
            )
            + "\n"
        )
        with pytest.raises(ValueError, match="unsupported version"):
            load_detections(str(path))

    def test_invalid_json_line_numbered(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_detections(str(path), HEADER, {0: []})
        with open(path, "a") as handle:
            handle.write("{not json\n")
        with pytest.raises(ValueError, match="line 3: invalid JSON"):
            load_detections(str(path))

    def test_duplicate_frame_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        save_detections(str(path), HEADER, {0: []})
        with open(path, "a") as handle:
            handle.write(json.dumps({"frame_index": 0, "poses": []}) + "\n")
        with pytest.raises(ValueError, match="line 3: duplicate frame 0"):
            load_detections(str(path))

    def test_malformed_coordinates_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_detections(str(path), HEADER, {})
        with open(path, "a") as handle:
            handle.write(
                json.dumps({"frame_index": 0, "poses": [{"withers": [1.0]}]}) + "\n"
            )
        with pytest.raises(ValueError, match="malformed coordinates"):
            load_detections(str(path))

    def test_missing_field_line_numbered(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        save_detections(str(path), HEADER, {})
        with open(path, "a") as handle:
            handle.write(json.dumps({"poses": []}) + "\n")
        with pytest.raises(ValueError, match="line 2: missing field"):
            load_detections(str(path))

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "blank.jsonl"
        save_detections(str(path), HEADER, {0: []})
        with open(path, "a") as handle:
            handle.write("\n\n")
        _, frames, _ = load_detections(str(path))
        assert set(frames) == {0}


class TestTracksStream:
    def tracked_outputs(self, spec, square_pose):
        tracker = KeySortTracker(spec, np.ones(len(spec.categories)))
        outputs = []
        for frame in range(4):
            pose = make_pose(
                frame_index=frame,
                **{
                    c: (x + 2.0 * frame, y)
                    for c, (x, y) in square_pose.coords.items()
                },
            )
            outputs.append(tracker.step([pose], frame_index=frame))
        return outputs

    def test_round_trip(self, spec, square_pose, tmp_path):
        outputs = self.tracked_outputs(spec, square_pose)
        path = tmp_path / "tracks.jsonl"
        save_tracks(str(path), HEADER, outputs)
        header, loaded = load_tracks(str(path))
        assert header == HEADER
        assert [o.frame_index for o in loaded] == [0, 1, 2, 3]
        for original, recovered in zip(outputs, loaded):
            assert len(original.records) == len(recovered.records)
            for ra, rb in zip(original.records, recovered.records):
                assert ra.tracklet_id == rb.tracklet_id
                assert rb.imputed == ra.imputed
                assert rb.alpha == (None if ra.alpha is None else pytest.approx(ra.alpha))
                assert rb.psi == (None if ra.psi is None else pytest.approx(ra.psi))
                for cat in spec.categories:
                    assert rb.posterior.get(cat) == pytest.approx(ra.posterior.get(cat))
                if ra.prior is None:
                    assert rb.prior is None
                else:
                    for cat in spec.categories:
                        assert rb.prior.get(cat) == pytest.approx(ra.prior.get(cat))

    def test_frames_sorted_on_save(self, spec, square_pose, tmp_path):
        outputs = self.tracked_outputs(spec, square_pose)
        path = tmp_path / "tracks.jsonl"
        save_tracks(str(path), HEADER, list(reversed(outputs)))
        _, loaded = load_tracks(str(path))
        assert [o.frame_index for o in loaded] == [0, 1, 2, 3]

    def test_missing_observation_rejected(self, tmp_path):
        path = tmp_path / "tracks.jsonl"
        record = {
            "frame_index": 0,
            "tracklets": [
                {"id": 1, "observed": None, "prior": None, "posterior": {}, "imputed": []}
            ],
        }
        with open(path, "w") as handle:
            handle.write(
                json.dumps(
                    {
                        "format": "keytrack-tracks",
                        "version": 1,
                        "skeleton": "s",
                        "width": 10,
                        "height": 10,
                    }
                )
                + "\n"
            )
            handle.write(json.dumps(record) + "\n")
        with pytest.raises(ValueError, match="without observation"):
            load_tracks(str(path))

    def test_tracklet_missing_field(self, tmp_path):
        path = tmp_path / "tracks.jsonl"
        record = {"frame_index": 0, "tracklets": [{"id": 1}]}
        with open(path, "w") as handle:
            handle.write(
                json.dumps(
                    {
                        "format": "keytrack-tracks",
                        "version": 1,
                        "skeleton": "s",
                        "width": 10,
                        "height": 10,
                    }
                )
                + "\n"
            )
            handle.write(json.dumps(record) + "\n")
        with pytest.raises(ValueError, match="line 2: tracklet missing field"):
            load_tracks(str(path))
