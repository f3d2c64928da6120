import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interrec.pose_core import (SBU_INDEX, InteractionLabel, InteractionSequence, JointId,
                                OutOfFrameWarning, ParseError, PersonPose, PoseError,
                                class_dir_label, discover_dataset, format_sbu_skeleton,
                                generate_synthetic, load_dataset, normalize_joint,
                                parse_keypoints, parse_sbu_skeleton, synthetic_dataset,
                                write_sequence)


def test_joint_and_label_enumerations():
    assert len(JointId) == 12
    assert [j.value for j in JointId] == list(range(12))
    assert JointId.HEAD == 0 and JointId.LKNEE == 11
    assert len(InteractionLabel) == 8
    assert InteractionLabel.EXCHANGING_OBJECT == 7


def test_label_parse_accepts_loose_spellings():
    assert InteractionLabel.parse("shaking hands") is InteractionLabel.SHAKING_HANDS
    assert InteractionLabel.parse("ExchangingObject") is InteractionLabel.EXCHANGING_OBJECT
    with pytest.raises(PoseError):
        InteractionLabel.parse("dancing")


class TestNormalizeJoint:
    def test_center(self):
        assert normalize_joint(320, 240, 640, 480) == (0.5, 0.5)

    def test_origin(self):
        assert normalize_joint(0, 0, 640, 480) == (0.0, 0.0)

    def test_clamps_with_warning(self):
        with pytest.warns(OutOfFrameWarning):
            x, y = normalize_joint(650, 100, 640, 480)
        assert x == 1.0
        assert y == pytest.approx(100 / 480)

    @pytest.mark.parametrize("w,h", [(0, 480), (640, 0), (-1, 5)])
    def test_bad_dimensions(self, w, h):
        with pytest.raises(PoseError):
            normalize_joint(1, 1, w, h)


def _sbu_line(frame=1, seed=0, n=90):
    vals = np.random.default_rng(seed).uniform(0.05, 0.95, n)
    return ",".join([str(frame)] + [f"{v:.6f}" for v in vals]), vals


class TestSbuParsing:
    def test_single_line(self):
        line, vals = _sbu_line()
        seq = parse_sbu_skeleton(line + "\n")
        assert len(seq) == 1
        fr = seq.frames[0]
        raw = np.array([float(f"{v:.6f}") for v in vals]).reshape(2, 15, 3)
        assert fr.person1.joints.shape == (12, 2)
        np.testing.assert_array_equal(fr.person1.joints, raw[0, SBU_INDEX, :2])
        np.testing.assert_array_equal(fr.person2.joints, raw[1, SBU_INDEX, :2])

    def test_joint_mapping(self):
        # SBU slot names for each JointId ordinal
        sbu = ["Head", "Neck", "Torso", "LShoulder", "LElbow", "LHand", "RShoulder", "RElbow",
               "RHand", "LHip", "LKnee", "LFoot", "RHip", "RKnee", "RFoot"]
        expected = ["Head", "Neck", "RShoulder", "RElbow", "RHand", "LShoulder", "LElbow", "LHand",
                    "RHip", "RKnee", "LHip", "LKnee"]
        assert [sbu[i] for i in SBU_INDEX] == expected
        assert len(set(SBU_INDEX)) == 12
        assert {"Torso", "LFoot", "RFoot"} == set(sbu) - {sbu[i] for i in SBU_INDEX}

    def test_empty_stream(self):
        with pytest.raises(ParseError, match="no frames"):
            parse_sbu_skeleton("")

    def test_wrong_field_count(self):
        line = ",".join(["1"] + ["0.5"] * 79)
        with pytest.raises(ParseError, match="line 1"):
            parse_sbu_skeleton(line)

    def test_non_numeric(self):
        line, _ = _sbu_line()
        with pytest.raises(ParseError, match="non-numeric"):
            parse_sbu_skeleton(line.replace("0.", "x.", 1))

    def test_frames_sorted(self):
        a, _ = _sbu_line(5, 1)
        b, _ = _sbu_line(2, 2)
        seq = parse_sbu_skeleton(f"{a}\n{b}\n")
        assert [f.frame_index for f in seq.frames] == [2, 5]

    def test_pixel_scale_is_normalized(self):
        vals = np.random.default_rng(3).uniform(10, 600, 90)
        line = ",".join(["1"] + [repr(float(v)) for v in vals])
        seq = parse_sbu_skeleton(line)
        arr = seq.poses()
        assert arr.max() <= 1.0 and arr.min() >= 0.0

    def test_round_trip(self):
        lines = [_sbu_line(i, i)[0] for i in range(1, 6)]
        seq = parse_sbu_skeleton("\n".join(lines), 3, "v", InteractionLabel.KICKING)
        again = parse_sbu_skeleton(format_sbu_skeleton(seq), 3, "v", InteractionLabel.KICKING)
        assert again == seq


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=48, max_size=48),
       st.integers(0, 10_000))
def test_round_trip_property(coords, frame):
    arr = np.array(coords).reshape(1, 2, 12, 2)
    seq = InteractionSequence.from_arrays(1, "p", InteractionLabel.HUGGING, [frame], arr)
    again = parse_sbu_skeleton(format_sbu_skeleton(seq), 1, "p", InteractionLabel.HUGGING)
    assert again == seq
    assert again.poses().min() >= 0 and again.poses().max() <= 1


def test_person_pose_rejects_out_of_range():
    with pytest.raises(PoseError):
        PersonPose(np.full((12, 2), 1.5))
    with pytest.raises(PoseError):
        PersonPose(np.zeros((11, 2)))


def test_sequence_requires_increasing_frames():
    arr = np.full((2, 2, 12, 2), 0.5)
    with pytest.raises(PoseError):
        InteractionSequence.from_arrays(1, "v", 0, [3, 3], arr)


def _person(conf, bbox=None):
    p = {"keypoints": [[100.0 + i, 50.0 + i, conf] for i in range(12)]}
    if bbox:
        p["bbox"] = bbox
    return p


class TestKeypoints:
    def test_two_confident_people(self):
        doc = {"frames": [{"index": 0, "width": 640, "height": 480,
                           "people": [_person(0.9), _person(0.9, [0, 0, 200, 400])]}]}
        frames = parse_keypoints(doc)
        assert len(frames[0].people) == 2
        assert frames[0].people[0].joints[0] == pytest.approx([100 / 640, 50 / 480])

    def test_low_confidence_dropped(self):
        doc = {"frames": [{"index": 0, "width": 640, "height": 480, "people": [_person(0.05)]}]}
        assert parse_keypoints(doc)[0].people == ()

    def test_threshold_configurable(self):
        doc = {"frames": [{"index": 0, "width": 640, "height": 480, "people": [_person(0.05)]}]}
        assert len(parse_keypoints(doc, min_confidence=0.01)[0].people) == 1

    def test_missing_frames(self):
        with pytest.raises(ParseError, match=r"\$\.frames"):
            parse_keypoints({"people": []})

    def test_error_names_field_path(self):
        bad = _person(0.9)
        bad["keypoints"][3] = [1, 2]
        doc = {"frames": [{"index": 0, "width": 640, "height": 480, "people": [bad]}]}
        with pytest.raises(ParseError, match=r"frames\[0\]\.people\[0\]\.keypoints\[3\]"):
            parse_keypoints(doc)

    def test_json_text(self):
        doc = {"frames": [{"index": 4, "width": 10, "height": 10, "people": []}]}
        assert parse_keypoints(json.dumps(doc))[0].index == 4


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(InteractionLabel.APPROACHING, 30, 7)
        b = generate_synthetic(InteractionLabel.APPROACHING, 30, 7)
        assert a == b

    def _head_gap(self, seq, k):
        f = seq.frames[k]
        return np.linalg.norm(f.person1[JointId.HEAD] - f.person2[JointId.HEAD])

    def test_approaching_closes_gap(self, approaching_seq):
        assert self._head_gap(approaching_seq, 29) < self._head_gap(approaching_seq, 0)

    def test_departing_opens_gap(self):
        seq = generate_synthetic(InteractionLabel.DEPARTING, 30, 7)
        assert self._head_gap(seq, 29) > self._head_gap(seq, 0)

    def test_punch_reaches_toward_head(self):
        seq = generate_synthetic(InteractionLabel.PUNCHING, 40, 1)
        d = [np.linalg.norm(f.person1[JointId.RWRIST] - f.person2[JointId.HEAD]) for f in seq.frames]
        assert min(d) < 0.5 * d[0]

    def test_too_short(self):
        with pytest.raises(PoseError):
            generate_synthetic(InteractionLabel.HUGGING, 1, 0)

    def test_dataset_spreads_over_sets(self):
        ds = synthetic_dataset(10, seed=1)
        assert len(ds) == 80
        assert {s.set_id for s in ds} == set(range(1, 22))


def test_dataset_layout_round_trip(tmp_path):
    seqs = synthetic_dataset(1, seed=2, min_len=5, max_len=8)
    for s in seqs:
        write_sequence(tmp_path, s)
    (tmp_path / "s01" / "01" / "bad").mkdir(parents=True)
    (tmp_path / "s01" / "01" / "bad" / "skeleton.txt").write_text("1,2,3\n")
    loaded, problems = load_dataset(tmp_path)
    assert len(problems) == 1
    by_id = {s.video_id: s for s in loaded}
    for s in seqs:
        assert by_id[s.video_id] == s


def test_sbu_style_set_names(tmp_path):
    seq = generate_synthetic(InteractionLabel.KICKING, 4, 0)
    for name in ("s01s02", "s01s03"):
        p = tmp_path / name / "03" / "001" / "skeleton_pos.txt"
        p.parent.mkdir(parents=True)
        p.write_text(format_sbu_skeleton(seq))
    entries = discover_dataset(tmp_path)
    assert [e.set_id for e in entries] == [1, 2]
    assert all(e.label is InteractionLabel.KICKING for e in entries)


def test_class_dir_table():
    assert class_dir_label("07") is InteractionLabel.SHAKING_HANDS
    assert class_dir_label("04_punching") is InteractionLabel.PUNCHING
    assert class_dir_label("hugging") is InteractionLabel.HUGGING
