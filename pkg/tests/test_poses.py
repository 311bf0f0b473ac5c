import json

import numpy as np
import pytest

from data.poses import (
    N_JOINTS,
    SCALE_FLOOR,
    ActorTrack,
    LabeledFrameSet,
    MotionWindow,
    denormalize,
    extract_windows,
    flatten,
    load_labels,
    load_tracks,
    normalize_window,
    num_workers,
    stack_windows,
    unflatten,
    write_labels,
    write_tracks_json,
)
from dcmd.errors import ArgumentError, ConfigError, DataError, ParseError


def make_track(indices, rng=None, clip_id="c", actor_id="0"):
    rng = rng or np.random.default_rng(0)
    joints = rng.uniform(0, 100, size=(len(indices), N_JOINTS, 2))
    return ActorTrack(actor_id=actor_id, clip_id=clip_id, frame_indices=np.asarray(indices), joints=joints)


def make_window(rng, history=3, future=4):
    joints = rng.uniform(50, 150, size=(history + future, N_JOINTS, 2))
    return MotionWindow("0", "c", 0, joints[:history], joints[history:])


def clip_doc(n_frames, n_joints=N_JOINTS):
    frames = [{"idx": i, "kp": [[float(i), float(j)] for j in range(n_joints)]} for i in range(n_frames)]
    return {"clip_id": "01_0001", "actors": [{"actor_id": "3", "frames": frames}]}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def test_load_native_json_single_actor(tmp_path):
    path = tmp_path / "clip.json"
    path.write_text(json.dumps(clip_doc(10)))
    loaded = load_tracks(path)
    assert len(loaded.tracks) == 1
    track = loaded.tracks[0]
    assert len(track) == 10
    assert track.key == "01_0001/3"
    assert track.joints.shape == (10, N_JOINTS, 2)
    assert loaded.n_dropped == 0


def test_track_with_missing_joints_is_dropped(tmp_path):
    doc = clip_doc(5)
    doc["actors"][0]["frames"][2]["kp"] = doc["actors"][0]["frames"][2]["kp"][:16]
    (tmp_path / "clip.json").write_text(json.dumps(doc))
    loaded = load_tracks(tmp_path)
    assert loaded.tracks == []
    assert loaded.dropped == ["01_0001/3"]


def test_empty_file_gives_no_tracks(tmp_path):
    (tmp_path / "empty.json").write_text("")
    loaded = load_tracks(tmp_path)
    assert loaded.tracks == [] and loaded.n_dropped == 0


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"clip_id": "a",\n"actors": [\n}')
    with pytest.raises(ParseError) as info:
        load_tracks(path)
    assert info.value.line == 3
    assert "bad.json:3" in str(info.value)


def test_duplicate_frame_index_is_parse_error(tmp_path):
    doc = clip_doc(3)
    doc["actors"][0]["frames"][1]["idx"] = 0
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load_tracks(path)


def test_missing_path_is_data_error(tmp_path):
    with pytest.raises(DataError):
        load_tracks(tmp_path / "nope")


def test_trajectory_csv_layout(tmp_path):
    clip = tmp_path / "01_0014"
    clip.mkdir()
    header = "frame," + ",".join(f"x{j},y{j}" for j in range(N_JOINTS))
    rows = [",".join([str(i)] + [f"{i + j}.5" for j in range(2 * N_JOINTS)]) for i in range(4)]
    (clip / "7.csv").write_text("\n".join([header, *rows]) + "\n")
    loaded = load_tracks(tmp_path, fmt="trajectory-csv")
    (track,) = loaded.tracks
    assert (track.clip_id, track.actor_id) == ("01_0014", "7")
    np.testing.assert_array_equal(track.frame_indices, np.arange(4))
    assert track.joints[2, 1, 0] == 4.5


def test_trajectory_csv_bad_row_reports_line(tmp_path):
    clip = tmp_path / "c"
    clip.mkdir()
    good = ",".join(["0"] + ["1.0"] * (2 * N_JOINTS))
    bad = ",".join(["1"] + ["oops"] * (2 * N_JOINTS))
    (clip / "0.csv").write_text("\n".join([good, good.replace("0", "2", 1), bad]))
    with pytest.raises(ParseError) as info:
        load_tracks(tmp_path, fmt="trajectory-csv")
    assert info.value.line == 3


def test_ragged_keypoints_are_parse_error(tmp_path):
    doc = clip_doc(3)
    doc["actors"][0]["frames"][1]["kp"][4] = [1.0, 2.0, 3.0]
    path = tmp_path / "ragged.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError, match="actor 3 frame 1"):
        load_tracks(path)


@pytest.mark.parametrize("idx", ["nan", "inf"])
def test_trajectory_csv_non_finite_frame_index(tmp_path, idx):
    clip = tmp_path / "c"
    clip.mkdir()
    coords = ["1.0"] * (2 * N_JOINTS)
    rows = [",".join(["0"] + coords), ",".join(["1"] + coords), ",".join([idx] + coords)]
    (clip / "0.csv").write_text("\n".join(rows))
    with pytest.raises(ParseError) as info:
        load_tracks(tmp_path, fmt="trajectory-csv")
    assert info.value.line == 3


def test_write_then_load_tracks(tmp_path):
    rng = np.random.default_rng(5)
    tracks = [make_track(range(6), rng, actor_id="0"), make_track(range(2, 9), rng, actor_id="1")]
    write_tracks_json(tmp_path, tracks)
    loaded = load_tracks(tmp_path).tracks
    assert [t.key for t in loaded] == ["c/0", "c/1"]
    for orig, back in zip(tracks, loaded):
        np.testing.assert_array_equal(orig.frame_indices, back.frame_indices)
        np.testing.assert_array_equal(orig.joints, back.joints)


def test_num_workers_env(monkeypatch):
    monkeypatch.setenv("DCMD_NUM_WORKERS", "3")
    assert num_workers() == 3
    monkeypatch.setenv("DCMD_NUM_WORKERS", "many")
    with pytest.raises(ConfigError):
        num_workers()


def test_actor_track_rejects_bad_shapes():
    with pytest.raises(DataError):
        ActorTrack("0", "c", np.arange(2), np.zeros((2, 16, 2)))
    with pytest.raises(DataError):
        ActorTrack("0", "c", np.array([0, 0]), np.zeros((2, N_JOINTS, 2)))


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------


def test_labels_written_and_read(tmp_path):
    labels = {"a": LabeledFrameSet("a", [0, 1, 1, 0]), "b": LabeledFrameSet("b", [0])}
    path = write_labels(tmp_path / "labels.csv", labels)
    back = load_labels(path)
    assert set(back) == {"a", "b"}
    np.testing.assert_array_equal(back["a"].labels, [0, 1, 1, 0])
    assert back["b"].n_frames == 1


def test_labels_with_gap_are_rejected(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("clip_id,frame_idx,label\na,0,0\na,2,1\n")
    with pytest.raises(ParseError):
        load_labels(path)


def test_labels_outside_binary_are_rejected(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("a,0,0\na,1,2\n")
    with pytest.raises(ParseError) as info:
        load_labels(path)
    assert info.value.line == 2


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------


def test_extract_windows_contiguous():
    windows = extract_windows(make_track(range(10)), 3, 4)
    assert [w.start_frame for w in windows] == [0, 1, 2, 3]
    assert all(w.history.shape == (3, N_JOINTS, 2) and w.future.shape == (4, N_JOINTS, 2) for w in windows)


def test_extract_windows_never_cross_gaps():
    track = make_track([0, 1, 2, 3, 4, 6, 7, 8, 9, 10])
    assert extract_windows(track, 3, 4) == []


def test_extract_windows_stride():
    windows = extract_windows(make_track(range(14)), 3, 4, stride=7)
    assert [w.start_frame for w in windows] == [0, 7]


def test_extract_windows_contents_follow_frames():
    track = make_track(range(8))
    w = extract_windows(track, 3, 4)[1]
    np.testing.assert_array_equal(w.joints, track.joints[1:8])


def test_extract_windows_rejects_zero_history():
    with pytest.raises(ArgumentError):
        extract_windows(make_track(range(10)), 0, 4)


def test_normalize_is_identity_on_centered_unit_window():
    half = np.array([[0.5, 0.25], [0.25, -0.125], [0.125, 0.375], [-0.375, 0.5],
                     [0.0, 0.125], [0.375, -0.25], [-0.125, -0.5], [0.25, 0.0]])
    first = np.concatenate([[[0.0, 0.0]], half, -half])
    assert first.shape == (N_JOINTS, 2)
    joints = np.repeat(first[None], 7, axis=0)
    w = MotionWindow("0", "c", 0, joints[:3], joints[3:])
    out = normalize_window(w)
    np.testing.assert_array_equal(out.joints, joints)
    np.testing.assert_array_equal(out.norm_record.center, [0.0, 0.0])
    assert out.norm_record.scale == 1.0


def test_normalize_translation_invariant(rng):
    w = make_window(rng)
    moved = MotionWindow("0", "c", 0, w.history + [5.0, 3.0], w.future + [5.0, 3.0])
    np.testing.assert_allclose(normalize_window(w).joints, normalize_window(moved).joints, atol=1e-12)


def test_normalize_scale_equivariant(rng):
    w = make_window(rng)
    scaled = MotionWindow("0", "c", 0, w.history * 2.5, w.future * 2.5)
    np.testing.assert_allclose(normalize_window(w).joints, normalize_window(scaled).joints, atol=1e-12)


def test_normalize_degenerate_pose_stays_finite():
    joints = np.full((7, N_JOINTS, 2), 4.0)
    out = normalize_window(MotionWindow("0", "c", 0, joints[:3], joints[3:]))
    assert np.all(np.isfinite(out.joints))
    assert out.norm_record.scale == SCALE_FLOOR
    assert out.norm_record.degenerate


def test_denormalize_recovers_source(rng):
    w = make_window(rng)
    once = normalize_window(w)
    np.testing.assert_allclose(denormalize(once), w.joints, atol=1e-9)
    twice = normalize_window(once)
    np.testing.assert_allclose(denormalize(twice), w.joints, atol=1e-9)


def test_flatten_row_layout(rng):
    w = make_window(rng)
    m = flatten(w)
    assert m.shape == (7, 2 * N_JOINTS)
    assert m[0, 0] == w.history[0, 0, 0]
    assert m[0, 1] == w.history[0, 0, 1]
    assert m[4, 2] == w.future[1, 1, 0]
    back = unflatten(m, w)
    np.testing.assert_array_equal(back.history, w.history)
    np.testing.assert_array_equal(back.future, w.future)


def test_stack_windows(rng):
    batch = stack_windows([make_window(rng), make_window(rng)])
    assert batch.shape == (2, 7, N_JOINTS, 2)
    with pytest.raises(DataError):
        stack_windows([])
