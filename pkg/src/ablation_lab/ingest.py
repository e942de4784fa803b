"""Recording ingestion: label parsing, replay building, splits, baselines.

Label files are comma-separated text, one frame per line:

    frame_id,episode_id,score,duration_ms,unclipped_reward,action,gx,gy,gx,gy,...

with the literal token ``null`` marking an absent action or absent gaze.
Frames live as image files named ``<frame_id>.<ext>`` next to the labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import (EmptyStore, MalformedLine, MissingFrame, ShapeMismatch,
                     UnknownAction)
from .store import ReplayStore

CANVAS = 84
DEFAULT_BLOCK_SIZE = 50
DEFAULT_VAL_FRACTION = 0.10

# the standard 18-action console vocabulary, by minimal action set index
ACTION_NAMES = (
    "NOOP", "FIRE", "UP", "RIGHT", "LEFT", "DOWN",
    "UPRIGHT", "UPLEFT", "DOWNRIGHT", "DOWNLEFT",
    "UPFIRE", "RIGHTFIRE", "LEFTFIRE", "DOWNFIRE",
    "UPRIGHTFIRE", "UPLEFTFIRE", "DOWNRIGHTFIRE", "DOWNLEFTFIRE",
)
ACTION_VOCABULARY = {name: i for i, name in enumerate(ACTION_NAMES)}

_IMAGE_EXTS = (".png", ".bmp", ".jpg", ".jpeg")


@dataclass
class FrameLabel:
    """One parsed label line."""

    frame_id: str
    episode_id: int
    score: int
    duration_ms: float
    unclipped_reward: float
    action: int | None
    gaze_points: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class SessionRecording:
    """One label file worth of frames, with its provenance."""

    name: str
    labels: list[FrameLabel]
    subject_id: str | None = None
    frame_dir: Path | None = None


def _parse_action(token: str, vocabulary, line_no: int) -> int | None:
    if token == "null":
        return None
    try:
        value = int(token)
    except ValueError:
        if vocabulary and token in vocabulary:
            return int(vocabulary[token])
        raise UnknownAction(token, line_no) from None
    if not 0 <= value <= 17:
        raise UnknownAction(token, line_no)
    return value


def parse_label_file(text, action_vocabulary=ACTION_VOCABULARY) -> list[FrameLabel]:
    """Parse label lines into FrameLabel records, in file order.

    ``text`` may be a string or any iterable of lines.  Blank lines and
    lines starting with ``#`` are skipped; line numbers reported in
    errors are 1-based over the raw input.
    """
    if isinstance(text, str):
        lines = text.splitlines()
    else:
        lines = [str(ln).rstrip("\n") for ln in text]

    labels = []
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) < 6:
            raise MalformedLine(line_no, f"expected at least 6 fields, got {len(fields)}")
        frame_id = fields[0]
        try:
            episode_id = int(float(fields[1]))
            score = int(float(fields[2]))
            duration_ms = float(fields[3])
            reward = float(fields[4])
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        action = _parse_action(fields[5], action_vocabulary, line_no)

        rest = fields[6:]
        gaze: list[tuple[float, float]] = []
        if rest and not (len(rest) == 1 and rest[0] == "null"):
            if len(rest) % 2 != 0:
                raise MalformedLine(line_no, "odd number of gaze coordinates")
            try:
                values = [float(tok) for tok in rest]
            except ValueError as exc:
                raise MalformedLine(line_no, str(exc)) from None
            gaze = list(zip(values[0::2], values[1::2]))
        labels.append(FrameLabel(frame_id, episode_id, score, duration_ms,
                                 reward, action, gaze))
    return labels


def _frame_path_index(frame_dir: Path) -> dict[str, Path]:
    index: dict[str, Path] = {}
    for p in sorted(frame_dir.iterdir()):
        if p.suffix.lower() in _IMAGE_EXTS:
            index.setdefault(p.stem, p)
    return index


def _load_frame(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise MissingFrame(path.stem)
    return img


def build_replay(frame_dir, labels, game_id: str, subject_filter: str | None = None,
                 pixels_per_degree: float = 4.0) -> ReplayStore:
    """Assemble a ReplayStore from parsed labels and their frame images.

    ``labels`` is either a flat FrameLabel sequence (treated as a single
    session) or a sequence of SessionRecording.  Frames are converted to
    84x84 grayscale (area-averaged luminance); gaze coordinates are
    clamped to the source frame and rescaled by the same spatial factors.
    States whose action is absent are dropped and counted.
    """
    frame_dir = Path(frame_dir) if frame_dir is not None else None
    if labels and isinstance(labels[0], FrameLabel):
        sessions = [SessionRecording("session_000", list(labels))]
    else:
        sessions = list(labels)
    if subject_filter is not None:
        sessions = [s for s in sessions if s.subject_id == subject_filter]
        if not sessions:
            raise EmptyStore(f"no session matches subject {subject_filter!r}")

    frames, actions, rewards = [], [], []
    episode_ids, session_ids = [], []
    gaze_flat: list[tuple[float, float]] = []
    gaze_counts: list[int] = []
    dropped = 0
    clamped = 0
    src_size: tuple[int, int] | None = None  # (width, height)
    next_episode = 0
    path_cache: dict[Path, dict[str, Path]] = {}

    for sess_no, session in enumerate(sessions):
        sdir = Path(session.frame_dir) if session.frame_dir is not None else frame_dir
        if sdir is None:
            raise MissingFrame(f"{session.name}: no frame directory")
        if sdir not in path_cache:
            path_cache[sdir] = _frame_path_index(sdir)
        index = path_cache[sdir]
        current_label_episode: int | None = None
        for label in session.labels:
            if label.action is None:
                dropped += 1
                continue
            if label.frame_id not in index:
                raise MissingFrame(label.frame_id)
            img = _load_frame(index[label.frame_id])
            h, w = img.shape[:2]
            if src_size is None:
                src_size = (w, h)
            elif (w, h) != src_size:
                raise ShapeMismatch("source resolution", src_size, (w, h))
            small = img if (w, h) == (CANVAS, CANVAS) else cv2.resize(
                img, (CANVAS, CANVAS), interpolation=cv2.INTER_AREA)

            if label.episode_id != current_label_episode:
                if current_label_episode is not None:
                    next_episode += 1
                current_label_episode = label.episode_id

            sx, sy = CANVAS / w, CANVAS / h
            count = 0
            for gx, gy in label.gaze_points:
                cx = min(max(float(gx), 0.0), w - 1e-3)
                cy = min(max(float(gy), 0.0), h - 1e-3)
                if cx != gx or cy != gy:
                    clamped += 1
                gaze_flat.append((cx * sx, cy * sy))
                count += 1

            frames.append(small)
            actions.append(label.action)
            rewards.append(label.unclipped_reward)
            episode_ids.append(next_episode)
            session_ids.append(sess_no)
            gaze_counts.append(count)
        if current_label_episode is not None:
            next_episode += 1  # episodes never span sessions

    if not frames:
        raise EmptyStore()

    n = len(frames)
    episode_arr = np.asarray(episode_ids, dtype=np.uint32)
    terminal = np.zeros(n, dtype=np.uint8)
    terminal[-1] = 1
    if n > 1:
        terminal[:-1][episode_arr[1:] != episode_arr[:-1]] = 1

    gaze_index = np.zeros(n + 1, dtype=np.uint64)
    np.cumsum(gaze_counts, out=gaze_index[1:])
    gaze_xy = (np.asarray(gaze_flat, dtype=np.float32).reshape(-1, 2)
               if gaze_flat else np.zeros((0, 2), dtype=np.float32))

    subjects = {s.subject_id for s in sessions}
    subject_id = subject_filter
    if subject_id is None and len(subjects) == 1:
        subject_id = next(iter(subjects))

    store = ReplayStore(
        game_id=game_id,
        subject_id=subject_id,
        frames=np.stack(frames).astype(np.uint8),
        actions=np.asarray(actions, dtype=np.uint8),
        rewards=np.asarray(rewards, dtype=np.float32),
        terminal=terminal,
        episode_id=episode_arr,
        session_id=np.asarray(session_ids, dtype=np.uint32),
        gaze_xy=gaze_xy,
        gaze_index=gaze_index,
        source_width=src_size[0],
        source_height=src_size[1],
        pixels_per_degree=pixels_per_degree,
        dropped_missing_action=dropped,
        clamped_gaze_points=clamped,
        session_names=[s.name for s in sessions],
        session_subjects=[s.subject_id for s in sessions],
    )
    store.validate()
    return store


# ---------------------------------------------------------------------------
# Splits and baselines

@dataclass
class SplitAssignment:
    """Per-state train/val tags from a block-based split."""

    block_size: int
    labels: np.ndarray  # [N] uint8; 0 = train, 1 = val
    seed: int
    val_fraction: float = DEFAULT_VAL_FRACTION

    TRAIN, VAL = 0, 1

    def indices(self, label: str) -> np.ndarray:
        tag = self.VAL if label == "val" else self.TRAIN
        return np.flatnonzero(self.labels == tag)

    def fingerprint(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(f"{self.block_size},{self.seed},{self.val_fraction};".encode())
        h.update(self.labels.astype(np.uint8).tobytes())
        return h.hexdigest()[:16]


def _episode_blocks(store: ReplayStore, block_size: int) -> list[np.ndarray]:
    """Consecutive index blocks of ``block_size``, restarting per episode."""
    blocks = []
    starts = np.flatnonzero(np.concatenate(
        [[True], store.episode_id[1:] != store.episode_id[:-1]]))
    bounds = np.append(starts, store.n_states)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        for b in range(lo, hi, block_size):
            blocks.append(np.arange(b, min(b + block_size, hi)))
    return blocks


def block_split(store: ReplayStore, block_size: int = DEFAULT_BLOCK_SIZE,
                val_fraction: float = DEFAULT_VAL_FRACTION,
                seed: int = 0) -> SplitAssignment:
    """Assign whole blocks of consecutive same-episode states to train/val.

    Blocks are chosen for validation by a seeded permutation with an
    exact count of round(val_fraction * n_blocks) (at least one when two
    or more blocks exist), so every split realizes the requested fraction
    rather than merely expecting it.
    """
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0,1), got {val_fraction}")
    if store.n_states == 0:
        raise EmptyStore()
    blocks = _episode_blocks(store, block_size)
    n_blocks = len(blocks)
    n_val = max(1, round(val_fraction * n_blocks)) if n_blocks >= 2 else 0
    order = np.random.default_rng(seed).permutation(n_blocks)
    labels = np.zeros(store.n_states, dtype=np.uint8)
    for b in order[:n_val]:
        labels[blocks[b]] = SplitAssignment.VAL
    return SplitAssignment(block_size=block_size, labels=labels, seed=seed,
                           val_fraction=val_fraction)


def compute_mean_frame(store: ReplayStore, split: SplitAssignment) -> np.ndarray:
    """Pixelwise mean of all train frames, float32 in [0,1]."""
    train_idx = split.indices("train")
    if train_idx.size == 0:
        raise EmptyStore("split has no train states")
    mean = store.frames_f32()[train_idx].mean(axis=0, dtype=np.float64)
    mean_frame = mean.astype(np.float32)
    store.mean_frame = mean_frame
    return mean_frame


def majority_action(store: ReplayStore, split: SplitAssignment) -> int:
    """Most frequent train action; ties break toward the lowest index."""
    train_idx = split.indices("train")
    if train_idx.size == 0:
        raise EmptyStore("split has no train states")
    counts = np.bincount(store.actions[train_idx], minlength=18)
    return int(np.argmax(counts))


def common_choice_accuracy(store: ReplayStore, split: SplitAssignment) -> float:
    """Val accuracy of always playing the most frequent train action."""
    val_idx = split.indices("val")
    if val_idx.size == 0:
        raise EmptyStore("split has no val states")
    best = majority_action(store, split)
    return float(np.mean(store.actions[val_idx] == best))
