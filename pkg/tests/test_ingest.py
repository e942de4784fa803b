"""Label parsing, replay assembly, persistence, splits and baselines."""

import numpy as np
import cv2
import pytest

from ablation_lab.errors import (CorruptStore, EmptyStore, MalformedLine,
                                 MissingFrame, ShapeMismatch, StoreExists,
                                 UnknownAction)
from ablation_lab.ingest import (ACTION_NAMES, FrameLabel, SessionRecording,
                                 SplitAssignment, block_split,
                                 common_choice_accuracy, compute_mean_frame,
                                 build_replay, majority_action,
                                 parse_label_file)
from ablation_lab.store import ReplayStore

from conftest import make_store


# ---------------------------------------------------------------------------
# Label parsing

def test_parse_basic_line():
    labels = parse_label_file("f_00,0,100,33.3,1.0,2,10.5,20.25")
    assert len(labels) == 1
    lab = labels[0]
    assert lab.frame_id == "f_00"
    assert lab.episode_id == 0
    assert lab.score == 100
    assert lab.duration_ms == 33.3
    assert lab.unclipped_reward == 1.0
    assert lab.action == 2
    assert lab.gaze_points == [(10.5, 20.25)]


def test_parse_multiple_gaze_pairs():
    lab = parse_label_file("f,1,0,16.7,0,5,1,2,3,4,5,6")[0]
    assert lab.gaze_points == [(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)]


def test_parse_null_action_and_null_gaze():
    text = "f0,0,0,33,0,null,10,20\nf1,0,0,33,0,3,null\n"
    labels = parse_label_file(text)
    assert labels[0].action is None
    assert labels[0].gaze_points == [(10.0, 20.0)]
    assert labels[1].action == 3
    assert labels[1].gaze_points == []


def test_parse_skips_blank_and_comment_lines():
    text = "# header comment\n\nf0,0,0,33,0,4\n   \nf1,0,0,33,0,5\n"
    labels = parse_label_file(text)
    assert [lab.frame_id for lab in labels] == ["f0", "f1"]


def test_parse_action_by_name():
    assert parse_label_file("f,0,0,33,0,FIRE")[0].action == 1
    assert parse_label_file("f,0,0,33,0,DOWNLEFTFIRE")[0].action == 17
    assert len(ACTION_NAMES) == 18


def test_parse_odd_gaze_count_reports_line_number():
    text = "f0,0,0,33,0,1\nf1,0,0,33,0,1\nf2,0,0,33,0,1,10,20,30\n"
    with pytest.raises(MalformedLine) as err:
        parse_label_file(text)
    assert err.value.line_no == 3


def test_parse_too_few_fields():
    with pytest.raises(MalformedLine):
        parse_label_file("f0,0,0,33")


def test_parse_unknown_action_token():
    with pytest.raises(UnknownAction):
        parse_label_file("f0,0,0,33,0,JUMP")
    with pytest.raises(UnknownAction):
        parse_label_file("f0,0,0,33,0,18")  # out of the 0..17 range
    with pytest.raises(UnknownAction):
        parse_label_file("f0,0,0,33,0,-1")


def test_parse_unparseable_number():
    with pytest.raises(MalformedLine):
        parse_label_file("f0,zero,0,33,0,1")
    with pytest.raises(MalformedLine):
        parse_label_file("f0,0,0,33,0,1,ten,20")


def test_parse_accepts_iterable_of_lines():
    labels = parse_label_file(["f0,0,0,33,0,1\n", "f1,0,0,33,0,2\n"])
    assert [lab.action for lab in labels] == [1, 2]


# ---------------------------------------------------------------------------
# Replay assembly

SRC_W, SRC_H = 160, 210


def write_frames(frame_dir, frame_ids, width=SRC_W, height=SRC_H, seed=0):
    frame_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for fid in frame_ids:
        img = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
        cv2.imwrite(str(frame_dir / f"{fid}.png"), img)


def test_build_replay_rescales_gaze_to_canvas(tmp_path):
    write_frames(tmp_path / "frames", ["a"])
    labels = [FrameLabel("a", 0, 0, 33.0, 0.0, 1, [(80.0, 105.0)])]
    store = build_replay(tmp_path / "frames", labels, game_id="g")
    # (80, 105) is the center of a 160x210 source frame -> (42, 42)
    assert store.gaze_xy.shape == (1, 2)
    assert store.gaze_xy[0] == pytest.approx((42.0, 42.0))
    assert store.frames.shape == (1, 84, 84)
    assert store.source_width == SRC_W and store.source_height == SRC_H


def test_build_replay_clamps_out_of_frame_gaze(tmp_path):
    write_frames(tmp_path / "frames", ["a"])
    labels = [FrameLabel("a", 0, 0, 33.0, 0.0, 1,
                         [(-5.0, 300.0), (10.0, 10.0)])]
    store = build_replay(tmp_path / "frames", labels, game_id="g")
    assert store.clamped_gaze_points == 1
    assert np.all(store.gaze_xy >= 0)
    assert np.all(store.gaze_xy < 84)


def test_build_replay_drops_actionless_states(tmp_path):
    write_frames(tmp_path / "frames", ["a", "b", "c"])
    labels = [
        FrameLabel("a", 0, 0, 33.0, 0.0, 1, []),
        FrameLabel("b", 0, 0, 33.0, 0.0, None, [(5.0, 5.0)]),
        FrameLabel("c", 0, 0, 33.0, 0.0, 2, []),
    ]
    store = build_replay(tmp_path / "frames", labels, game_id="g")
    assert store.n_states == 2
    assert store.dropped_missing_action == 1
    assert list(store.actions) == [1, 2]


def test_build_replay_missing_frame(tmp_path):
    write_frames(tmp_path / "frames", ["a"])
    labels = [FrameLabel("zzz", 0, 0, 33.0, 0.0, 1, [])]
    with pytest.raises(MissingFrame):
        build_replay(tmp_path / "frames", labels, game_id="g")


def test_build_replay_all_dropped_is_empty(tmp_path):
    write_frames(tmp_path / "frames", ["a"])
    labels = [FrameLabel("a", 0, 0, 33.0, 0.0, None, [])]
    with pytest.raises(EmptyStore):
        build_replay(tmp_path / "frames", labels, game_id="g")


def test_build_replay_rejects_mixed_resolution(tmp_path):
    write_frames(tmp_path / "frames", ["a"])
    write_frames(tmp_path / "frames", ["b"], width=84, height=84)
    labels = [FrameLabel("a", 0, 0, 33.0, 0.0, 1, []),
              FrameLabel("b", 0, 0, 33.0, 0.0, 1, [])]
    with pytest.raises(ShapeMismatch):
        build_replay(tmp_path / "frames", labels, game_id="g")


def test_build_replay_episode_numbering_across_sessions(tmp_path):
    # label episode ids restart per session; stored ids must stay unique
    write_frames(tmp_path / "f1", ["a", "b"])
    write_frames(tmp_path / "f2", ["c", "d"])
    sessions = [
        SessionRecording("run_S1_x", [
            FrameLabel("a", 0, 0, 33.0, 0.0, 1, []),
            FrameLabel("b", 1, 0, 33.0, 0.0, 1, []),
        ], subject_id="S1", frame_dir=tmp_path / "f1"),
        SessionRecording("run_S2_y", [
            FrameLabel("c", 0, 0, 33.0, 0.0, 1, []),
            FrameLabel("d", 0, 0, 33.0, 0.0, 1, []),
        ], subject_id="S2", frame_dir=tmp_path / "f2"),
    ]
    store = build_replay(None, sessions, game_id="g")
    assert list(store.episode_id) == [0, 1, 2, 2]
    assert list(store.session_id) == [0, 0, 1, 1]
    assert list(store.terminal) == [1, 1, 0, 1]
    assert store.n_episodes == 3
    assert store.session_subjects == ["S1", "S2"]
    assert store.subject_id is None  # mixed subjects


def test_build_replay_subject_filter(tmp_path):
    write_frames(tmp_path / "f1", ["a"])
    sessions = [
        SessionRecording("run_S1", [FrameLabel("a", 0, 0, 33.0, 0.0, 1, [])],
                         subject_id="S1", frame_dir=tmp_path / "f1"),
        SessionRecording("run_S2", [FrameLabel("a", 0, 0, 33.0, 0.0, 2, [])],
                         subject_id="S2", frame_dir=tmp_path / "f1"),
    ]
    store = build_replay(None, sessions, game_id="g", subject_filter="S2")
    assert store.n_states == 1
    assert store.subject_id == "S2"
    assert list(store.actions) == [2]
    with pytest.raises(EmptyStore):
        build_replay(None, sessions, game_id="g", subject_filter="S9")


def test_frame_downsampling_preserves_mean_brightness(tmp_path):
    # area interpolation averages blocks, so a constant frame stays constant
    frame_dir = tmp_path / "frames"
    frame_dir.mkdir()
    img = np.full((SRC_H, SRC_W), 137, dtype=np.uint8)
    cv2.imwrite(str(frame_dir / "a.png"), img)
    store = build_replay(frame_dir, [FrameLabel("a", 0, 0, 33.0, 0.0, 0, [])],
                         game_id="g")
    assert np.all(store.frames[0] == 137)


# ---------------------------------------------------------------------------
# Store persistence

def test_store_round_trip_bit_identical(tmp_path):
    store = make_store(episode_lengths=(7, 5), seed=9)
    store.mean_frame = np.random.default_rng(1).uniform(
        0, 1, (84, 84)).astype(np.float32)
    store.save(tmp_path / "store")
    again = ReplayStore.load(tmp_path / "store")
    for name in ("frames", "actions", "rewards", "terminal", "episode_id",
                 "session_id", "gaze_xy", "gaze_index", "mean_frame"):
        assert np.array_equal(getattr(store, name), getattr(again, name)), name
    assert again.game_id == store.game_id
    assert again.subject_id == store.subject_id
    assert again.pixels_per_degree == store.pixels_per_degree
    assert again.session_names == store.session_names


def test_store_save_refuses_to_clobber(tmp_path):
    store = make_store(episode_lengths=(4,))
    store.save(tmp_path / "store")
    with pytest.raises(StoreExists):
        store.save(tmp_path / "store")
    store.save(tmp_path / "store", force=True)  # explicit overwrite allowed


def test_store_load_detects_corruption(tmp_path):
    store = make_store(episode_lengths=(4,))
    out = store.save(tmp_path / "store")
    blob = out / "frames.u8"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(CorruptStore):
        ReplayStore.load(out)
    ReplayStore.load(out, verify=False)  # opt-out skips the checksum


def test_validate_rejects_noncontiguous_episodes():
    store = make_store(episode_lengths=(4, 4))
    bad = store.episode_id.copy()
    bad[[0, 1, 2, 3]] = [0, 1, 0, 1]
    store.episode_id = bad
    with pytest.raises(CorruptStore):
        store.validate()


def test_gaze_centers_inherit_within_session_only():
    store = make_store(episode_lengths=(2, 2), session_of_episode=[0, 1],
                       max_gaze=0)
    # hand one gaze point to the first state of each session
    store.gaze_xy = np.array([(10.0, 20.0), (50.0, 60.0)], dtype=np.float32)
    store.gaze_index = np.array([0, 1, 1, 2, 2], dtype=np.uint64)
    centers = store.gaze_centers()
    assert tuple(centers[0]) == (10.0, 20.0)
    assert tuple(centers[1]) == (10.0, 20.0)   # inherited
    assert tuple(centers[2]) == (50.0, 60.0)   # new session, new point
    assert tuple(centers[3]) == (50.0, 60.0)


def test_gaze_centers_default_at_session_start():
    store = make_store(episode_lengths=(3,), max_gaze=0)
    store.gaze_xy = np.array([(30.0, 40.0)], dtype=np.float32)
    store.gaze_index = np.array([0, 0, 1, 1], dtype=np.uint64)
    centers = store.gaze_centers()
    assert tuple(centers[0]) == (41.5, 41.5)   # nothing seen yet
    assert tuple(centers[1]) == (30.0, 40.0)
    assert tuple(centers[2]) == (30.0, 40.0)


# ---------------------------------------------------------------------------
# Block split

def test_split_exact_fraction_on_round_store():
    store = make_store(episode_lengths=(1000,))
    split = block_split(store, block_size=50, val_fraction=0.10, seed=0)
    # 20 blocks -> exactly 2 validation blocks -> 100 states
    assert int(np.sum(split.labels == SplitAssignment.VAL)) == 100
    assert int(np.sum(split.labels == SplitAssignment.TRAIN)) == 900


def test_split_fraction_within_band():
    store = make_store(episode_lengths=(5000,))
    split = block_split(store, block_size=50, seed=3)
    frac = np.mean(split.labels == SplitAssignment.VAL)
    assert 0.08 <= frac <= 0.12


def test_split_short_tail_block():
    store = make_store(episode_lengths=(73,))
    split = block_split(store, block_size=50, seed=1)
    # blocks of 50 and 23; at least one block must be validation
    n_val = int(np.sum(split.labels == SplitAssignment.VAL))
    assert n_val in (23, 50)


def test_split_blocks_restart_per_episode():
    store = make_store(episode_lengths=(60, 60))
    split = block_split(store, block_size=50, seed=0)
    # blocks are [0:50], [50:60], [60:110], [110:120]; each is pure
    for lo, hi in ((0, 50), (50, 60), (60, 110), (110, 120)):
        assert np.unique(split.labels[lo:hi]).size == 1
    # no block spans the episode boundary at 60
    assert int(np.sum(split.labels == SplitAssignment.VAL)) in (10, 50, 60)


def test_split_purity_and_indices():
    store = make_store(episode_lengths=(200,))
    split = block_split(store, block_size=10, seed=5)
    train, val = split.indices("train"), split.indices("val")
    assert np.intersect1d(train, val).size == 0
    assert train.size + val.size == 200
    assert val.size == 20  # 20 blocks -> 2 val blocks


def test_split_deterministic_per_seed():
    store = make_store(episode_lengths=(500,))
    a = block_split(store, block_size=50, seed=4)
    b = block_split(store, block_size=50, seed=4)
    c = block_split(store, block_size=50, seed=5)
    assert np.array_equal(a.labels, b.labels)
    assert a.fingerprint() == b.fingerprint()
    assert not np.array_equal(a.labels, c.labels)
    assert a.fingerprint() != c.fingerprint()


def test_split_fingerprint_format():
    store = make_store(episode_lengths=(100,))
    fp = block_split(store, block_size=10, seed=0).fingerprint()
    assert len(fp) == 16
    int(fp, 16)  # hex


def test_split_argument_validation():
    store = make_store(episode_lengths=(10,))
    with pytest.raises(ValueError):
        block_split(store, block_size=0)
    with pytest.raises(ValueError):
        block_split(store, val_fraction=0.0)
    with pytest.raises(ValueError):
        block_split(store, val_fraction=1.0)


def test_split_single_block_store_has_no_val():
    store = make_store(episode_lengths=(30,))
    split = block_split(store, block_size=50, seed=0)
    assert int(np.sum(split.labels == SplitAssignment.VAL)) == 0


# ---------------------------------------------------------------------------
# Baselines

def manual_split(labels):
    return SplitAssignment(block_size=1,
                           labels=np.asarray(labels, dtype=np.uint8), seed=0)


def test_mean_frame_matches_brute_force():
    store = make_store(episode_lengths=(12,), seed=2)
    split = manual_split([0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1])
    mean = compute_mean_frame(store, split)
    want = (store.frames[[0, 1, 2, 6, 7, 8]].astype(np.float64) / 255.0
            ).mean(axis=0)
    assert mean.dtype == np.float32
    assert np.max(np.abs(mean.astype(np.float64) - want)) < 1e-7
    assert store.mean_frame is mean  # cached on the store


def test_mean_frame_of_constant_store_is_constant():
    frames = np.full((4, 84, 84), 100, dtype=np.uint8)
    store = make_store(episode_lengths=(4,), frames=frames)
    mean = compute_mean_frame(store, manual_split([0, 0, 0, 1]))
    assert np.allclose(mean, 100.0 / 255.0, atol=1e-7)


def test_majority_action_and_tie_rule():
    store = make_store(episode_lengths=(6,),
                       actions=np.array([2, 2, 3, 3, 5, 0], dtype=np.uint8))
    split = manual_split([0, 0, 0, 0, 1, 1])
    # train actions {2, 2, 3, 3}: tie between 2 and 3 -> lowest wins
    assert majority_action(store, split) == 2


def test_common_choice_accuracy_values():
    actions = np.array([1, 1, 1, 1, 1, 2, 1, 2], dtype=np.uint8)
    store = make_store(episode_lengths=(8,), actions=actions)
    split = manual_split([0, 0, 0, 0, 1, 1, 1, 1])
    # train majority is 1; val actions are [1, 2, 1, 2] -> accuracy 0.5
    assert common_choice_accuracy(store, split) == 0.5
    all_same = make_store(episode_lengths=(4,),
                          actions=np.array([7, 7, 7, 7], dtype=np.uint8))
    assert common_choice_accuracy(all_same, manual_split([0, 0, 1, 1])) == 1.0
