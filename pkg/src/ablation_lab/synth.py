"""Synthetic recordings with scripted, information-controlled policies.

Each policy kind fixes *which* information source determines the action,
so the expected ablation outcome is known by construction:

* FOCUS      — a size-coded glyph sits at the gaze center (inside the 6°
               disc); every configuration can read it.
* PERIPHERY  — the glyph sits in a far corner, wholly outside an 8°
               radius around the gaze; masked configurations lose it.
* MEMORY     — the glyph is flashed periodically and the action replays
               the *previous* flash: visible at offset -30 or -45, never
               at -15, and independent of anything in the current stack.
               The first cycle replays an unflashed lead cue, keeping the
               action marginal stationary from the first frame.
* GAZE_LOC   — the action is the quadrant of the gaze point; frames are
               blank, so only gaze maps or masking geometry reveal it.
* NOISE      — actions are balanced random draws; nothing predicts them.

Designed-chance configurations must *converge to* the majority baseline
rather than rattle around it, so the generator removes every input
channel that is learnable but uninformative.  Frames are noise-free
renders on one shared background: stochastic texture or per-episode
brightness would hand a signal-deprived model memorizable features, and
long schedules would drift off the baseline by overfitting them.
PERIPHERY, MEMORY, and NOISE pin the gaze to the shared canvas center,
making masked frames and gaze maps identical across episodes (FOCUS and
GAZE_LOC gaze varies because it is, or carries, the signal).  Kinds with
designed-chance pairs anchor half of all action draws on action 0, with
the remainder near-even: the pooled optimum for a model shorn of its
designed signal is then exactly the constant that the common-choice
baseline scores, and training longer only locks it in.  MEMORY's visible
flash adds no side channel: cues are drawn without replacement from a
window in which action 0 keeps a strict majority even after conditioning
on the currently flashed cue.  FOCUS and NOISE draws stay balanced
(class counts differ by at most one): FOCUS has no designed-chance pair,
and NOISE actions are uniform by definition.

Frames are emitted at 160x210 source resolution with gaze in source
coordinates, exercising the real ingestion path (resize + rescale).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .config import ModelConfig
from .errors import InvalidArity, StoreExists

KINDS = ("FOCUS", "PERIPHERY", "MEMORY", "GAZE_LOC", "NOISE")

SRC_W, SRC_H = 160, 210
CANVAS = 84
GLYPH_SIZES = (4, 7, 10, 13)        # canvas px, action-coded
GLYPH_BRIGHTNESS = 0.95
BACKGROUND = 0.3                    # shared by all episodes (not identifying)
NOISE_SIGMA = 0.01
MEMORY_CYCLE = 30                   # frames: 15 visible, 15 clean
MIN_LENGTH = 60                     # admits at least one full past window

# rng stream tags, so tests can vary one stream while freezing the rest
_GAZE_STREAM, _POLICY_STREAM, _NOISE_STREAM = 0, 1, 2


@dataclass
class EpisodePlan:
    """Fully-determined recipe for one episode; rendering is pure."""

    kind: str
    seed: int
    episode_id: int
    length: int
    arity: int
    background: float
    gaze84: np.ndarray                     # [L, 2] canvas coordinates
    glyph: list[tuple[float, float, int] | None]   # (cx, cy, size) in canvas px
    actions: np.ndarray                    # [L] int64
    cues: np.ndarray | None = None         # MEMORY only: per-cycle cue indices
    lead_cue: int = 0                      # MEMORY only: cycle-0 action, never flashed

    def frame_id(self, t: int) -> str:
        return f"{self.kind.lower()}_{self.episode_id:03d}_{t:05d}"


def _sizes_for(kind: str, arity: int) -> tuple[int, ...]:
    if not 2 <= arity <= 18:
        raise InvalidArity(arity)
    if kind == "GAZE_LOC" and arity != 4:
        raise InvalidArity(arity)
    if kind in ("FOCUS", "PERIPHERY", "MEMORY") and arity > len(GLYPH_SIZES):
        raise InvalidArity(arity)
    return GLYPH_SIZES[:arity]


def _streams(seed: int, episode_id: int):
    return [np.random.default_rng(np.random.SeedSequence([seed, episode_id, tag]))
            for tag in (_GAZE_STREAM, _POLICY_STREAM)]


def _balanced_draws(rng, n: int, arity: int) -> np.ndarray:
    """Shuffled near-balanced categorical sequence: class counts differ by
    at most one, so per-episode frequencies alone predict nothing."""
    seq = np.tile(np.arange(arity, dtype=np.int64), n // arity + 1)[:n]
    rng.shuffle(seq)
    return seq


def _anchored_draws(rng, n: int, arity: int) -> np.ndarray:
    """Shuffled draws with a decisive majority on class 0 (about 1.5x the
    uniform share) and the remainder split near-evenly.  Any predictor
    blind to the designed signal then settles on class 0 — the same
    constant the common-choice baseline scores — instead of drifting
    among near-tied classes."""
    c0 = round(1.5 * n / arity)
    rest = np.tile(np.arange(1, arity, dtype=np.int64),
                   n // max(arity - 1, 1) + 1)[:n - c0]
    seq = np.concatenate([np.zeros(c0, dtype=np.int64), rest])
    rng.shuffle(seq)
    return seq


def plan_episode(kind: str, length: int, action_arity: int = 4,
                 seed: int = 0, episode_id: int = 0) -> EpisodePlan:
    """Script one episode: gaze path, glyph placement, actions."""
    if kind not in KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    if length < MIN_LENGTH:
        raise ValueError(f"length must be >= {MIN_LENGTH}, got {length}")
    sizes = _sizes_for(kind, action_arity)
    rng_gaze, rng_policy = _streams(seed, episode_id)
    background = BACKGROUND
    gaze84 = np.zeros((length, 2), dtype=np.float64)
    glyph: list[tuple[float, float, int] | None] = [None] * length
    actions = np.zeros(length, dtype=np.int64)
    cues = None

    lead_cue = 0
    if kind == "FOCUS":
        a_seq = _balanced_draws(rng_policy, -(-length // 10), action_arity)
        gx = gy = None
        for t in range(length):
            if t % 25 == 0:
                gx, gy = rng_gaze.uniform(9, 74, 2)
            a = int(a_seq[t // 10])
            gaze84[t] = (gx, gy)
            glyph[t] = (gx, gy, sizes[a])
            actions[t] = a
    elif kind == "PERIPHERY":
        # gaze walks; the glyph tracks the farthest corner, which stays
        # over 32 px (8 deg) away from any point of the [12, 71]^2 box
        corners = np.array([(12, 12), (12, 71), (71, 12), (71, 71)], dtype=np.float64)
        a_seq = _anchored_draws(rng_policy, -(-length // 10), action_arity)
        pos = np.array([41.5, 41.5])
        for t in range(length):
            pos = np.clip(pos + rng_gaze.normal(0.0, 2.0, 2), 12.0, 71.0)
            far = corners[np.argmax(((corners - pos) ** 2).sum(axis=1))]
            a = int(a_seq[t // 10])
            gaze84[t] = pos
            glyph[t] = (far[0], far[1], sizes[a])
            actions[t] = a
    elif kind == "MEMORY":
        n_cycles = length // MEMORY_CYCLE + 2
        # anchor the cues that become actions (the lead plus the cues
        # governing in-episode cycles); trailing cues only drive renders
        n_acting = -(-length // MEMORY_CYCLE)
        window = _anchored_draws(rng_policy, n_acting, action_arity)
        lead_cue = int(window[0])
        tail = rng_policy.integers(0, action_arity, n_cycles - n_acting + 1)
        cues = np.concatenate([window[1:], tail.astype(np.int64)])
        half = MEMORY_CYCLE // 2
        pos = np.array([41.5, 41.5])
        for t in range(length):
            cycle, phase = divmod(t, MEMORY_CYCLE)
            pos = np.clip(pos + rng_gaze.normal(0.0, 2.0, 2), 10.0, 73.0)
            gaze84[t] = pos
            if phase < half:
                glyph[t] = (pos[0], pos[1], sizes[cues[cycle]])
            actions[t] = cues[cycle - 1] if cycle >= 1 else lead_cue
    elif kind == "GAZE_LOC":
        q_seq = _anchored_draws(rng_policy, -(-length // 20), 4)
        gx = gy = None
        for t in range(length):
            if t % 20 == 0:
                quadrant = int(q_seq[t // 20])
                gx = rng_gaze.uniform(4, 36) if quadrant % 2 == 0 \
                    else rng_gaze.uniform(48, 80)
                gy = rng_gaze.uniform(4, 36) if quadrant < 2 \
                    else rng_gaze.uniform(48, 80)
            gaze84[t] = (gx, gy)
            actions[t] = (0 if gx < 42 else 1) + (0 if gy < 42 else 2)
    else:  # NOISE
        acts = _balanced_draws(rng_policy, length, action_arity)
        pos = np.array([41.5, 41.5])
        for t in range(length):
            pos = np.clip(pos + rng_gaze.normal(0.0, 3.0, 2), 2.0, 82.0)
            gaze84[t] = pos
            actions[t] = int(acts[t])

    return EpisodePlan(kind=kind, seed=seed, episode_id=episode_id, length=length,
                       arity=action_arity, background=background, gaze84=gaze84,
                       glyph=glyph, actions=actions, cues=cues, lead_cue=lead_cue)


def render_frame(plan: EpisodePlan, t: int) -> np.ndarray:
    """Render frame t at source resolution, uint8 grayscale.

    Noise is seeded per (seed, episode, t), so a frame's pixels never
    depend on the policy stream — changing a MEMORY cue changes actions
    and flash frames but leaves every other frame bit-identical.
    """
    frame = np.full((SRC_H, SRC_W), plan.background, dtype=np.float32)
    g = plan.glyph[t]
    if g is not None:
        cx, cy, size = g
        x0 = round((cx - size / 2) * SRC_W / CANVAS)
        x1 = round((cx + size / 2) * SRC_W / CANVAS)
        y0 = round((cy - size / 2) * SRC_H / CANVAS)
        y1 = round((cy + size / 2) * SRC_H / CANVAS)
        frame[y0:y1, x0:x1] = GLYPH_BRIGHTNESS
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([plan.seed, plan.episode_id, _NOISE_STREAM, t]))
    frame += noise_rng.normal(0.0, NOISE_SIGMA, frame.shape).astype(np.float32)
    np.clip(frame, 0.0, 1.0, out=frame)
    return np.round(frame * 255.0).astype(np.uint8)


def _label_line(plan: EpisodePlan, t: int) -> str:
    gx = plan.gaze84[t, 0] * SRC_W / CANVAS
    gy = plan.gaze84[t, 1] * SRC_H / CANVAS
    return (f"{plan.frame_id(t)},{plan.episode_id},0,33.3,0,"
            f"{int(plan.actions[t])},{gx:.4f},{gy:.4f}")


def write_recording(plans, out_dir, force: bool = False) -> tuple[Path, Path]:
    """Emit plans as an ingestible recording: frames/ + labels.txt."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise StoreExists(out_dir)
        import shutil
        shutil.rmtree(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True)
    lines = []
    for plan in plans:
        for t in range(plan.length):
            cv2.imwrite(str(frames_dir / f"{plan.frame_id(t)}.png"),
                        render_frame(plan, t))
            lines.append(_label_line(plan, t))
    label_path = out_dir / "labels.txt"
    label_path.write_text("\n".join(lines) + "\n")
    return label_path, frames_dir


def generate_episode(kind: str, length: int, action_arity: int = 4,
                     seed: int = 0, out_dir=None,
                     force: bool = False) -> tuple[Path, Path]:
    """Write a single-episode recording in the ingest format."""
    plan = plan_episode(kind, length, action_arity, seed)
    return write_recording([plan], out_dir, force=force)


def generate_recording(kind: str, episodes: int, length: int,
                       action_arity: int = 4, seed: int = 0, out_dir=None,
                       force: bool = False) -> tuple[Path, Path]:
    """Write a multi-episode recording (one label file, shared frame dir)."""
    plans = [plan_episode(kind, length, action_arity, seed, episode_id=e)
             for e in range(episodes)]
    return write_recording(plans, out_dir, force=force)


def theoretical_accuracy(kind: str, config: ModelConfig) -> str:
    """Construction-implied accuracy class, 'high' or 'chance'."""
    if kind == "FOCUS":
        return "high"
    if kind == "PERIPHERY":
        return "chance" if not config.periphery else "high"
    if kind == "MEMORY":
        return "high" if config.past else "chance"
    if kind == "GAZE_LOC":
        # masked frames implicitly encode gaze location, so either the
        # gaze branch or the masking geometry suffices
        return "chance" if (config.periphery and not config.gaze) else "high"
    if kind == "NOISE":
        return "chance"
    raise ValueError(f"unknown policy kind {kind!r}")
