"""Columnar on-disk replay store.

One store holds every state of one game (optionally restricted to one
subject): frames, actions, rewards, episode/session ids and the ragged
per-frame gaze point lists.  The layout is a directory with a JSON
manifest (geometry, counts, sha256 checksums) plus little-endian raw
arrays, so a completed store is self-describing and seekable without
any special dependencies.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gazemaps
from .errors import CorruptStore, EmptyStore, ShapeMismatch, StoreExists
from .masking import DEFAULT_CENTER

FORMAT_VERSION = 1

# array name -> (file name, dtype); order fixed for the manifest
_ARRAYS = {
    "frames": ("frames.u8", "<u1"),
    "actions": ("actions.u8", "<u1"),
    "rewards": ("rewards.f32", "<f4"),
    "terminal": ("terminal.u8", "<u1"),
    "episode_id": ("episode_id.u32", "<u4"),
    "session_id": ("session_id.u32", "<u4"),
    "gaze_xy": ("gaze_xy.f32", "<f4"),
    "gaze_index": ("gaze_index.u64", "<u8"),
}


@dataclass
class ReplayStore:
    """All states of one game, in temporal order, episodes contiguous."""

    game_id: str
    subject_id: str | None
    frames: np.ndarray        # [N, 84, 84] uint8 (presented as [0,1] floats)
    actions: np.ndarray       # [N] uint8, each in [0, 17]
    rewards: np.ndarray       # [N] float32, unclipped
    terminal: np.ndarray      # [N] uint8, 1 on the last state of an episode
    episode_id: np.ndarray    # [N] uint32, globally unique across sessions
    session_id: np.ndarray    # [N] uint32
    gaze_xy: np.ndarray       # [G, 2] float32, 84x84 canvas coordinates
    gaze_index: np.ndarray    # [N+1] uint64 offsets into gaze_xy
    source_width: int
    source_height: int
    pixels_per_degree: float = 4.0
    dropped_missing_action: int = 0
    clamped_gaze_points: int = 0
    session_names: list[str] = field(default_factory=list)
    session_subjects: list[str | None] = field(default_factory=list)
    mean_frame: np.ndarray | None = None
    path: Path | None = None
    _derived: dict = field(default_factory=dict, repr=False)

    # -- basic accessors ----------------------------------------------------

    @property
    def n_states(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_episodes(self) -> int:
        return int(np.unique(self.episode_id).size)

    def gaze_points(self, index: int) -> np.ndarray:
        """Gaze points of one state as an (P, 2) float32 view."""
        lo, hi = int(self.gaze_index[index]), int(self.gaze_index[index + 1])
        return self.gaze_xy[lo:hi]

    def frames_f32(self) -> np.ndarray:
        """Frames as float32 in [0,1]; computed once and cached."""
        if "frames_f32" not in self._derived:
            self._derived["frames_f32"] = self.frames.astype(np.float32) / 255.0
        return self._derived["frames_f32"]

    def episode_start(self) -> np.ndarray:
        """For each state, the index of the first state of its episode."""
        if "episode_start" not in self._derived:
            n = self.n_states
            starts = np.zeros(n, dtype=np.int64)
            if n > 0:
                new_ep = np.empty(n, dtype=bool)
                new_ep[0] = True
                new_ep[1:] = self.episode_id[1:] != self.episode_id[:-1]
                idx = np.arange(n, dtype=np.int64)
                starts = np.maximum.accumulate(np.where(new_ep, idx, 0))
            self._derived["episode_start"] = starts
        return self._derived["episode_start"]

    def gaze_centers(self) -> np.ndarray:
        """Per-state focus centers, shape [N, 2] float64.

        Last fixation of the frame; frames without fixations inherit the
        previous center within the same session, and fall back to the
        canvas center at a session start.
        """
        if "gaze_centers" not in self._derived:
            n = self.n_states
            centers = np.empty((n, 2), dtype=np.float64)
            prev = None
            prev_session = None
            for i in range(n):
                if prev_session is not None and self.session_id[i] != prev_session:
                    prev = None
                pts = self.gaze_points(i)
                if pts.shape[0] > 0:
                    prev = (float(pts[-1, 0]), float(pts[-1, 1]))
                centers[i] = prev if prev is not None else DEFAULT_CENTER
                prev_session = self.session_id[i]
            self._derived["gaze_centers"] = centers
        return self._derived["gaze_centers"]

    def validate(self) -> None:
        """Shape and invariant checks; raises on inconsistency."""
        n = self.n_states
        if n == 0:
            raise EmptyStore("store has no states")
        for name in ("actions", "rewards", "terminal", "episode_id", "session_id"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ShapeMismatch(name, (n,), arr.shape)
        if self.frames.shape[1:] != (gazemaps.CANVAS, gazemaps.CANVAS):
            raise ShapeMismatch("frames", (n, 84, 84), self.frames.shape)
        if self.gaze_index.shape != (n + 1,):
            raise ShapeMismatch("gaze_index", (n + 1,), self.gaze_index.shape)
        if int(self.gaze_index[-1]) != self.gaze_xy.shape[0]:
            raise ShapeMismatch("gaze_xy rows", int(self.gaze_index[-1]),
                                self.gaze_xy.shape[0])
        if np.any(np.diff(self.gaze_index.astype(np.int64)) < 0):
            raise CorruptStore(str(self.path), "gaze_index is not non-decreasing")
        # episodes contiguous: each episode id occupies one run
        ids = self.episode_id
        changes = np.flatnonzero(ids[1:] != ids[:-1])
        run_ids = np.concatenate([[ids[0]], ids[changes + 1]]) if n > 1 else ids[:1]
        if np.unique(run_ids).size != run_ids.size:
            raise CorruptStore(str(self.path), "episode ids are not contiguous runs")
        # terminal marks exactly the last state of each episode
        expect_term = np.zeros(n, dtype=np.uint8)
        expect_term[-1] = 1
        if n > 1:
            expect_term[:-1][ids[1:] != ids[:-1]] = 1
        if not np.array_equal(self.terminal, expect_term):
            raise CorruptStore(str(self.path), "terminal flags do not match episode ends")

    # -- persistence --------------------------------------------------------

    def save(self, out_dir, force: bool = False) -> Path:
        """Write the store to ``out_dir``; refuses to clobber unless forced."""
        out_dir = Path(out_dir)
        if out_dir.exists() and any(out_dir.iterdir()):
            if not force:
                raise StoreExists(out_dir)
            shutil.rmtree(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

        arrays = {}
        for name, (fname, dtype) in _ARRAYS.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=dtype)
            raw = arr.tobytes()
            (out_dir / fname).write_bytes(raw)
            arrays[name] = {
                "file": fname,
                "dtype": dtype,
                "shape": list(arr.shape),
                "sha256": hashlib.sha256(raw).hexdigest(),
            }
        manifest = {
            "format_version": FORMAT_VERSION,
            "game_id": self.game_id,
            "subject_id": self.subject_id,
            "n_states": self.n_states,
            "n_gaze_points": int(self.gaze_xy.shape[0]),
            "n_episodes": self.n_episodes,
            "source_width": self.source_width,
            "source_height": self.source_height,
            "pixels_per_degree": self.pixels_per_degree,
            "dropped_missing_action": self.dropped_missing_action,
            "clamped_gaze_points": self.clamped_gaze_points,
            "session_names": self.session_names,
            "session_subjects": self.session_subjects,
            "arrays": arrays,
        }
        if self.mean_frame is not None:
            raw = np.ascontiguousarray(self.mean_frame, dtype="<f4").tobytes()
            (out_dir / "mean_frame.f32").write_bytes(raw)
            manifest["mean_frame"] = {"file": "mean_frame.f32", "dtype": "<f4",
                                      "shape": [84, 84],
                                      "sha256": hashlib.sha256(raw).hexdigest()}
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        self.path = out_dir
        return out_dir

    @classmethod
    def load(cls, store_dir, verify: bool = True) -> "ReplayStore":
        """Read a store directory back; checksums verified by default."""
        store_dir = Path(store_dir)
        manifest_path = store_dir / "manifest.json"
        if not manifest_path.is_file():
            raise CorruptStore(str(store_dir), "manifest.json not found")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CorruptStore(str(store_dir),
                               f"unsupported format_version {manifest.get('format_version')}")

        def read_array(spec: dict) -> np.ndarray:
            raw = (store_dir / spec["file"]).read_bytes()
            if verify and hashlib.sha256(raw).hexdigest() != spec["sha256"]:
                raise CorruptStore(str(store_dir), f"checksum mismatch for {spec['file']}")
            return np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"]).copy()

        kwargs = {name: read_array(manifest["arrays"][name]) for name in _ARRAYS}
        mean_frame = None
        if "mean_frame" in manifest:
            mean_frame = read_array(manifest["mean_frame"])
        store = cls(
            game_id=manifest["game_id"],
            subject_id=manifest["subject_id"],
            source_width=manifest["source_width"],
            source_height=manifest["source_height"],
            pixels_per_degree=manifest["pixels_per_degree"],
            dropped_missing_action=manifest["dropped_missing_action"],
            clamped_gaze_points=manifest["clamped_gaze_points"],
            session_names=list(manifest.get("session_names", [])),
            session_subjects=list(manifest.get("session_subjects", [])),
            mean_frame=mean_frame,
            path=store_dir,
            **kwargs,
        )
        store.validate()
        return store

    # -- gaze map cache -----------------------------------------------------

    def _cache_blob_path(self, ppd: float) -> Path | None:
        if self.path is None:
            return None
        return self.path / f"gazemaps_ppd{ppd:g}.f32"

    def gaze_maps(self, pixels_per_degree: float | None = None) -> np.ndarray:
        """Per-state gaze map stacks, shape [N, 4, 84, 84] float32.

        Backed by an on-disk cache (memory-mapped) when the store lives on
        disk; rendered densely in memory otherwise.  Keyed by ppd so a
        store can carry caches for several geometries.
        """
        ppd = self.pixels_per_degree if pixels_per_degree is None else pixels_per_degree
        key = ("gaze_maps", float(ppd))
        if key in self._derived:
            return self._derived[key]
        blob = self._cache_blob_path(ppd)
        if blob is not None:
            if not blob.exists():
                gazemaps.write_gaze_map_cache(
                    blob, (self.gaze_points(i) for i in range(self.n_states)), ppd)
            mm, meta = gazemaps.open_gaze_map_cache(blob)
            if meta["n_states"] != self.n_states:
                raise CorruptStore(str(self.path),
                                   f"gaze map cache built for {meta['n_states']} states, "
                                   f"store has {self.n_states}")
            self._derived[key] = mm
        else:
            stacks = np.empty((self.n_states, 4, 84, 84), dtype=np.float32)
            for i in range(self.n_states):
                stacks[i] = gazemaps.build_gaze_stack(self.gaze_points(i), ppd)
            self._derived[key] = stacks
        return self._derived[key]
