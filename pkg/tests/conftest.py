"""Shared fixtures: compact hand-built replay stores for fast tests."""

import numpy as np
import pytest

from ablation_lab.ingest import block_split, compute_mean_frame
from ablation_lab.store import ReplayStore


def make_store(episode_lengths=(60,), seed=0, game_id="toygame",
               n_actions=18, max_gaze=3, frames=None, actions=None,
               session_of_episode=None, pixels_per_degree=4.0):
    """Build a small validated in-memory ReplayStore.

    Frames are uint8 noise and each state carries 0..max_gaze random gaze
    points unless explicit arrays are supplied.  ``session_of_episode``
    optionally maps each episode to a session number (default: all 0).
    """
    rng = np.random.default_rng(seed)
    lengths = [int(x) for x in episode_lengths]
    n = sum(lengths)
    if frames is None:
        frames = rng.integers(0, 256, size=(n, 84, 84), dtype=np.uint8)
    if actions is None:
        actions = rng.integers(0, n_actions, size=n).astype(np.uint8)
    episode_id = np.concatenate(
        [np.full(length, e, dtype=np.uint32) for e, length in enumerate(lengths)])
    terminal = np.zeros(n, dtype=np.uint8)
    terminal[np.cumsum(lengths) - 1] = 1
    if session_of_episode is None:
        session_of_episode = [0] * len(lengths)
    session_id = np.concatenate(
        [np.full(length, session_of_episode[e], dtype=np.uint32)
         for e, length in enumerate(lengths)])
    counts = rng.integers(0, max_gaze + 1, size=n)
    gaze_index = np.zeros(n + 1, dtype=np.uint64)
    gaze_index[1:] = np.cumsum(counts)
    gaze_xy = rng.uniform(0.0, 83.99, size=(int(gaze_index[-1]), 2)).astype(np.float32)

    store = ReplayStore(
        game_id=game_id,
        subject_id="S01",
        frames=np.ascontiguousarray(frames, dtype=np.uint8),
        actions=np.ascontiguousarray(actions, dtype=np.uint8),
        rewards=np.zeros(n, dtype=np.float32),
        terminal=terminal,
        episode_id=episode_id,
        session_id=session_id,
        gaze_xy=gaze_xy,
        gaze_index=gaze_index,
        source_width=160,
        source_height=210,
        pixels_per_degree=pixels_per_degree,
        session_names=[f"sess_{s:02d}" for s in sorted(set(session_of_episode))],
        session_subjects=["S01" for _ in sorted(set(session_of_episode))],
    )
    store.validate()
    return store


def make_learnable_store(n_per_action=60, n_actions=2, episode_length=None,
                         seed=0):
    """Store whose action is readable from frame brightness alone.

    Action a is played on frames of constant brightness 40 + 120*a, so any
    configuration that sees the current frame (even masked to the focus
    disc) can reach perfect accuracy.
    """
    rng = np.random.default_rng(seed)
    n = n_per_action * n_actions
    actions = rng.integers(0, n_actions, size=n).astype(np.uint8)
    levels = (40 + 120 * actions.astype(np.int64)).astype(np.uint8)
    frames = np.broadcast_to(levels[:, None, None], (n, 84, 84)).copy()
    if episode_length is None:
        episode_length = n
    lengths = [episode_length] * (n // episode_length)
    if n % episode_length:
        lengths.append(n % episode_length)
    return make_store(episode_lengths=lengths, seed=seed + 1,
                      frames=frames, actions=actions)


@pytest.fixture
def small_store():
    """Two short episodes of random frames with gaze."""
    return make_store(episode_lengths=(60, 60), seed=3)


@pytest.fixture
def split_and_mean(small_store):
    split = block_split(small_store, block_size=10, seed=0)
    mean = compute_mean_frame(small_store, split)
    return split, mean
