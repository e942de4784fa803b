"""Model-input assembly: state stacks, gaze stacks, past windows, batches.

What a model sees for one decision depends on its configuration: the
current two-frame stack (periphery-masked or not), an optional gaze map
stack, and optionally the same inputs for three earlier states at
offsets -15, -30 and -45 frames within the same episode.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import InvalidWindow, NoValidStates
from .ingest import SplitAssignment, compute_mean_frame
from .masking import FocusRegion, default_radius_px, disc_indicator
from .store import ReplayStore

PAST_OFFSETS = (15, 30, 45)
N_PAST = len(PAST_OFFSETS)


@dataclass
class StateSample:
    """Everything one configuration sees for one decision."""

    current: np.ndarray               # [2, 84, 84] float32, frames (t-1, t)
    gaze_stack: np.ndarray | None     # [4, 84, 84] float32 when config.gaze
    past: list["StateSample"] | None  # 3 earlier samples, no further nesting
    action: int
    index: int


@dataclass
class Batch:
    """A stacked minibatch, ready to feed the network."""

    current: np.ndarray               # [B, 2, 84, 84]
    gaze: np.ndarray | None           # [B, 4, 84, 84]
    past_current: np.ndarray | None   # [B, 3, 2, 84, 84]
    past_gaze: np.ndarray | None      # [B, 3, 4, 84, 84]
    actions: np.ndarray               # [B] int64
    indices: np.ndarray               # [B] int64

    def __len__(self) -> int:
        return int(self.actions.shape[0])


def _masked_frames(store: ReplayStore, mean_frame: np.ndarray) -> np.ndarray:
    """All frames with their periphery replaced by the mean frame, cached."""
    key = ("masked_frames",
           hashlib.sha256(np.ascontiguousarray(mean_frame, "<f4")).hexdigest()[:16])
    if key not in store._derived:
        frames = store.frames_f32()
        centers = store.gaze_centers()
        radius = default_radius_px(store.pixels_per_degree)
        out = np.empty_like(frames)
        mean32 = mean_frame.astype(np.float32)
        for i in range(store.n_states):
            keep = disc_indicator(FocusRegion((centers[i, 0], centers[i, 1]), radius))
            out[i] = np.where(keep, frames[i], mean32)
        store._derived[key] = out
    return store._derived[key]


def _frame_source(store: ReplayStore, config: ModelConfig,
                  mean_frame: np.ndarray | None) -> np.ndarray:
    if config.periphery:
        return store.frames_f32()
    if mean_frame is None:
        raise ValueError("mean_frame is required when the periphery is excluded")
    return _masked_frames(store, mean_frame)


def valid_indices(store: ReplayStore, config: ModelConfig,
                  split: SplitAssignment | None = None,
                  label: str | None = None) -> np.ndarray:
    """Indices usable under a configuration, optionally split-filtered.

    Past-enabled configurations require the -45 frame to fall inside the
    same episode; everything else is always valid, so valid(A) is a
    subset of valid(B) by construction.
    """
    if split is not None and label is not None:
        base = split.indices(label)
    else:
        base = np.arange(store.n_states, dtype=np.int64)
    if not config.past:
        return base
    ok = base - max(PAST_OFFSETS) >= store.episode_start()[base]
    return base[ok]


def _current_pair(store: ReplayStore, idx: np.ndarray) -> np.ndarray:
    """Indices of the (t-1, t) stack; episode starts duplicate themselves."""
    prev = np.maximum(idx - 1, store.episode_start()[idx])
    return np.stack([prev, idx], axis=1)


def assemble_batch(store: ReplayStore, indices, config: ModelConfig,
                   mean_frame: np.ndarray | None = None) -> Batch:
    """Gather a batch for explicit state indices (vectorized)."""
    idx = np.asarray(indices, dtype=np.int64)
    starts = store.episode_start()
    if config.past:
        bad = idx - max(PAST_OFFSETS) < starts[idx]
        if np.any(bad):
            i = int(idx[bad][0])
            raise InvalidWindow(i, f"index - {max(PAST_OFFSETS)} precedes episode start "
                                   f"{int(starts[i])}")
    frames = _frame_source(store, config, mean_frame)
    pair = _current_pair(store, idx)
    current = frames[pair]
    gaze = store.gaze_maps()[idx] if config.gaze else None
    past_current = past_gaze = None
    if config.past:
        p_idx = np.stack([idx - off for off in PAST_OFFSETS], axis=1)  # [B, 3]
        p_pair = np.stack([np.maximum(p_idx - 1, starts[p_idx]), p_idx], axis=2)
        past_current = frames[p_pair]
        if config.gaze:
            past_gaze = store.gaze_maps()[p_idx]
    return Batch(current=np.ascontiguousarray(current, np.float32),
                 gaze=None if gaze is None else np.ascontiguousarray(gaze, np.float32),
                 past_current=None if past_current is None
                 else np.ascontiguousarray(past_current, np.float32),
                 past_gaze=None if past_gaze is None
                 else np.ascontiguousarray(past_gaze, np.float32),
                 actions=store.actions[idx].astype(np.int64),
                 indices=idx)


def assemble_state(store: ReplayStore, index: int, config: ModelConfig,
                   mean_frame: np.ndarray | None = None) -> StateSample:
    """Build the sample for a single state, with per-config attachments."""
    index = int(index)
    starts = store.episode_start()
    if config.past and index - max(PAST_OFFSETS) < starts[index]:
        raise InvalidWindow(index, f"index - {max(PAST_OFFSETS)} precedes episode "
                                   f"start {int(starts[index])}")
    frames = _frame_source(store, config, mean_frame)

    def one(i: int, with_past: bool) -> StateSample:
        pair = _current_pair(store, np.asarray([i]))[0]
        past = None
        if with_past:
            past = [one(i - off, False) for off in PAST_OFFSETS]
        return StateSample(
            current=frames[pair].astype(np.float32),
            gaze_stack=(store.gaze_maps()[i].astype(np.float32)
                        if config.gaze else None),
            past=past,
            action=int(store.actions[i]),
            index=i)

    return one(index, config.past)


def sample_batch(store: ReplayStore, split: SplitAssignment, label: str,
                 config: ModelConfig, mean_frame: np.ndarray | None = None,
                 batch_size: int = 64,
                 rng: np.random.Generator | None = None) -> Batch:
    """Draw a batch uniformly with replacement from the valid indices."""
    pool = valid_indices(store, config, split, label)
    if pool.size == 0:
        raise NoValidStates(f"no valid {label} states for configuration {config.id}")
    if not config.periphery and mean_frame is None:
        mean_frame = store.mean_frame
        if mean_frame is None:
            mean_frame = compute_mean_frame(store, split)
    rng = np.random.default_rng() if rng is None else rng
    chosen = pool[rng.integers(0, pool.size, size=batch_size)]
    return assemble_batch(store, chosen, config, mean_frame)
