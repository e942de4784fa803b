"""Clustering of states in the six-model response space.

Every state in the validation split gets a response vector: the six
true-action probabilities assigned by models A-F.  K-means (k=5) is fit
on the pooled vectors, silhouette scores measure separability on random
subsamples, and an exact t-SNE embeds a subsample in 2-D for plotting.

The numeric routines are implemented here directly (plain numpy) because
their exact mechanics — restart policy, tie rules, empty-cluster
reseeding, perplexity calibration, exaggeration schedule — are part of
the package contract and are tested against brute-force oracles.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .config import CONFIG_IDS
from .errors import (MissingModel, PerplexityTooLarge, SingleCluster,
                     TooFewPoints)
from .ingest import SplitAssignment
from .sampler import valid_indices
from .store import ReplayStore
from .training import TrainedModel, predict_true_action_probabilities

DEFAULT_K = 5
DEFAULT_PERPLEXITY = 80.0
SILHOUETTE_SUBSAMPLE = 2000
TSNE_POOLED_SUBSAMPLE = 10000
TSNE_GAME_SUBSAMPLE = 1000


# ---------------------------------------------------------------------------
# Response vectors

@dataclass
class ResponseVectorSet:
    """Pooled response vectors with their state provenance."""

    z: np.ndarray                       # [M, 6] float64, columns ordered A..F
    game_ids: list[str]                 # per row
    state_indices: np.ndarray           # [M] int64, index into each game's store
    subject_id: str | None = None

    def __len__(self) -> int:
        return int(self.z.shape[0])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.z).tobytes())
        h.update(",".join(self.game_ids).encode())
        return h.hexdigest()[:16]

    @staticmethod
    def concatenate(sets: list["ResponseVectorSet"]) -> "ResponseVectorSet":
        subjects = {s.subject_id for s in sets}
        return ResponseVectorSet(
            z=np.concatenate([s.z for s in sets], axis=0),
            game_ids=[g for s in sets for g in s.game_ids],
            state_indices=np.concatenate([s.state_indices for s in sets]),
            subject_id=subjects.pop() if len(subjects) == 1 else None)


def collect_response_vectors(models: dict[str, TrainedModel], store: ReplayStore,
                             split: SplitAssignment,
                             label: str = "val") -> ResponseVectorSet:
    """One 6-vector per state that every configuration can evaluate.

    States too close to an episode start for the past window are valid
    for B/D/F but not A/C/E, so the intersection of valid-index sets is
    used — every vector component refers to the same state.
    """
    for cid in CONFIG_IDS:
        if cid not in models:
            raise MissingModel(cid)
    idx = None
    for cid in CONFIG_IDS:
        pool = valid_indices(store, models[cid].config, split, label)
        idx = pool if idx is None else np.intersect1d(idx, pool)
    z = np.empty((idx.size, len(CONFIG_IDS)), dtype=np.float64)
    for m, cid in enumerate(CONFIG_IDS):
        z[:, m] = predict_true_action_probabilities(models[cid], store, idx)
    return ResponseVectorSet(z=z, game_ids=[store.game_id] * idx.size,
                             state_indices=idx.astype(np.int64),
                             subject_id=store.subject_id)


# ---------------------------------------------------------------------------
# K-means

@dataclass
class ClusterModel:
    centroids: np.ndarray   # [k, d] float64
    seed: int
    fingerprint: str        # binds the pooled set the model was fit on
    wcss: float
    n_points: int


def _sq_dists(Z: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, [n_points, n_centroids]."""
    d = Z[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def _kmeans_pp(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D²-weighted sampling of successive centers."""
    n = Z.shape[0]
    centroids = np.empty((k, Z.shape[1]), dtype=np.float64)
    centroids[0] = Z[rng.integers(n)]
    d2 = np.einsum("ij,ij->i", Z - centroids[0], Z - centroids[0])
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a centroid
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[c] = Z[pick]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", Z - centroids[c], Z - centroids[c]))
    return centroids


def _lloyd(Z: np.ndarray, centroids: np.ndarray,
           max_iters: int) -> tuple[np.ndarray, np.ndarray, float]:
    k = centroids.shape[0]
    prev_labels = None
    prev_wcss = np.inf
    labels = np.zeros(Z.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        d2 = _sq_dists(Z, centroids)
        labels = np.argmin(d2, axis=1)  # ties resolve to the lowest index
        own = d2[np.arange(Z.shape[0]), labels].copy()
        for c in range(k):
            if not np.any(labels == c):  # reseed empty cluster to farthest point
                far = int(np.argmax(own))
                centroids[c] = Z[far]
                labels[far] = c
                own[far] = 0.0
        for c in range(k):
            centroids[c] = Z[labels == c].mean(axis=0)
        diff = Z - centroids[labels]
        wcss = float(np.einsum("ij,ij->", diff, diff))
        # Lloyd descent is monotone; a violation means a broken update step
        assert wcss <= prev_wcss + 1e-9, f"WCSS increased: {prev_wcss} -> {wcss}"
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels, prev_wcss = labels.copy(), wcss
    return centroids, labels, wcss


def _exact_two_partition(Z: np.ndarray) -> tuple[np.ndarray, float]:
    """Globally optimal 2-means by bipartition enumeration (point 0 fixed
    in the first part, so each split is visited once)."""
    n = Z.shape[0]
    best_cost = float("inf")
    best = None
    for bits in range(1, 2 ** (n - 1)):
        mask = np.zeros(n, dtype=bool)
        for i in range(n - 1):
            if (bits >> i) & 1:
                mask[i + 1] = True
        a, b = Z[~mask], Z[mask]
        ca, cb = a.mean(axis=0), b.mean(axis=0)
        cost = float(((a - ca) ** 2).sum() + ((b - cb) ** 2).sum())
        if cost < best_cost:
            best_cost, best = cost, np.stack([ca, cb])
    return best, best_cost


def kmeans_fit(Z, k: int = DEFAULT_K, seed: int = 0, restarts: int = 10,
               max_iters: int = 300, fingerprint: str = "") -> ClusterModel:
    """Best-of-``restarts`` Lloyd's algorithm from k-means++ seeding.

    Tiny two-cluster instances are solved exactly by enumerating every
    bipartition (restart seeding cannot guarantee the optimum there).
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] < k:
        raise TooFewPoints(Z.shape[0], k)
    if k == 2 and Z.shape[0] <= 16:
        centroids, wcss = _exact_two_partition(Z)
        return ClusterModel(centroids=centroids, seed=seed,
                            fingerprint=fingerprint or
                            hashlib.sha256(Z.tobytes()).hexdigest()[:16],
                            wcss=wcss, n_points=int(Z.shape[0]))
    rng = np.random.default_rng(seed)
    best: tuple[float, np.ndarray] | None = None
    for _ in range(restarts):
        centroids, _, wcss = _lloyd(Z, _kmeans_pp(Z, k, rng), max_iters)
        if best is None or wcss < best[0]:
            best = (wcss, centroids.copy())
    return ClusterModel(centroids=best[1], seed=seed,
                        fingerprint=fingerprint or
                        hashlib.sha256(Z.tobytes()).hexdigest()[:16],
                        wcss=best[0], n_points=int(Z.shape[0]))


def assign(model: ClusterModel, z) -> np.ndarray | int:
    """Nearest-centroid assignment; ties go to the lowest cluster index."""
    arr = np.asarray(z, dtype=np.float64)
    single = arr.ndim == 1
    labels = np.argmin(_sq_dists(arr.reshape(-1, arr.shape[-1]), model.centroids),
                       axis=1)
    return int(labels[0]) if single else labels


@dataclass
class ClusterProfiles:
    k: int
    counts: np.ndarray            # [k] int64
    proportions: np.ndarray       # [k] float64, sums to 1
    means: np.ndarray             # [k, 6]; NaN rows for empty clusters
    per_game: dict[str, np.ndarray]  # game -> [k] proportions, each sums to 1


def cluster_profiles(model: ClusterModel, vectors: ResponseVectorSet,
                     labels: np.ndarray) -> ClusterProfiles:
    """Mean response profile and population share of every cluster."""
    k = model.centroids.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    proportions = counts / max(1, len(labels))
    means = np.full((k, vectors.z.shape[1]), np.nan)
    for c in range(k):
        if counts[c] > 0:
            means[c] = vectors.z[labels == c].mean(axis=0)
    per_game: dict[str, np.ndarray] = {}
    games = np.asarray(vectors.game_ids)
    for g in sorted(set(vectors.game_ids)):
        mask = games == g
        per_game[g] = np.bincount(labels[mask], minlength=k) / int(mask.sum())
    return ClusterProfiles(k=k, counts=counts, proportions=proportions,
                           means=means, per_game=per_game)


# ---------------------------------------------------------------------------
# Silhouette

@dataclass
class SilhouetteResult:
    indices: np.ndarray        # subsample rows (into the scored set)
    scores: np.ndarray         # [M] float64 in [-1, 1]
    labels: np.ndarray         # [M] cluster of each scored point
    per_cluster: dict[int, float]
    overall: float


def silhouette(Z, labels, subsample_size: int = SILHOUETTE_SUBSAMPLE,
               seed: int = 0) -> SilhouetteResult:
    """Classic silhouette s = (b - a) / max(a, b) on a seeded subsample.

    ``a`` is the mean distance to the point's own cluster (excluding
    itself), ``b`` the smallest mean distance to any other cluster;
    points in singleton clusters score 0.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    n = Z.shape[0]
    if n > subsample_size:
        idx = np.sort(np.random.default_rng(seed).choice(n, subsample_size,
                                                         replace=False))
    else:
        idx = np.arange(n)
    zs, ls = Z[idx], labels[idx]
    present = np.unique(ls)
    if present.size < 2:
        raise SingleCluster()
    d = np.sqrt(np.maximum(_sq_dists(zs, zs), 0.0))
    m = zs.shape[0]
    scores = np.zeros(m, dtype=np.float64)
    for i in range(m):
        same = ls == ls[i]
        n_same = int(same.sum())
        if n_same <= 1:
            continue  # singleton: s = 0
        a = d[i, same].sum() / (n_same - 1)  # exclude self distance 0
        b = min(d[i, ls == c].mean() for c in present if c != ls[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    per_cluster = {int(c): float(scores[ls == c].mean()) for c in present}
    return SilhouetteResult(indices=idx, scores=scores, labels=ls,
                            per_cluster=per_cluster, overall=float(scores.mean()))


# ---------------------------------------------------------------------------
# Exact t-SNE

def conditional_affinities(Z, perplexity: float,
                           tol: float = 1e-5,
                           max_steps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Per-point Gaussian affinities calibrated to one target perplexity.

    For each row the precision beta = 1/(2 sigma^2) is found by binary
    search so that the conditional distribution's Shannon entropy equals
    log(perplexity).  Returns (P_conditional [N,N], betas [N]).
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if perplexity > (n - 1) / 3:
        raise PerplexityTooLarge(perplexity, n)
    D2 = _sq_dists(Z, Z)
    target = np.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    betas = np.ones(n, dtype=np.float64)
    for i in range(n):
        lo, hi = -np.inf, np.inf
        beta = 1.0
        d = np.delete(D2[i], i)
        for _ in range(max_steps):
            w = np.exp(-d * beta)
            s = w.sum()
            if s <= 0:
                h = 0.0
                p = w
            else:
                p = w / s
                # H = log s + beta * <d> under p, the stable entropy form
                h = np.log(s) + beta * float((d * p).sum())
            if abs(h - target) < tol:
                break
            if h > target:  # too spread out: raise precision
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
        row = np.zeros(n)
        row[np.arange(n) != i] = p
        P[i] = row
        betas[i] = beta
    return P, betas


def joint_affinities(Z, perplexity: float) -> np.ndarray:
    """Symmetrized affinities: P = (P_cond + P_condᵀ) / 2N, floored at 1e-12."""
    P_cond, _ = conditional_affinities(Z, perplexity)
    n = P_cond.shape[0]
    P = (P_cond + P_cond.T) / (2.0 * n)
    return np.maximum(P, 1e-12)


def tsne_embed(Z, perplexity: float = DEFAULT_PERPLEXITY, iters: int = 1000,
               seed: int = 0, learning_rate: float = 200.0,
               early_exaggeration: float = 12.0,
               exaggeration_until: int = 250) -> np.ndarray:
    """Exact t-SNE to 2-D: KL gradient descent with momentum and early
    exaggeration; deterministic per seed.  O(N²) — intended for N ≤ 10,000."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    P = joint_affinities(Z, perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2)) * 1e-2
    velocity = np.zeros_like(Y)
    for it in range(iters):
        p_eff = P * early_exaggeration if it < exaggeration_until else P
        momentum = 0.5 if it < exaggeration_until else 0.8
        d2 = _sq_dists(Y, Y)
        num = 1.0 / (1.0 + d2)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        # dKL/dY_i = 4 sum_j (p_ij - q_ij) * num_ij * (y_i - y_j)
        W = (p_eff - Q) * num
        grad = 4.0 * ((np.diag(W.sum(axis=1)) - W) @ Y)
        velocity = momentum * velocity - learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
    return Y


# ---------------------------------------------------------------------------
# CSV emission / re-ingestion

def write_response_vectors_csv(vectors: ResponseVectorSet, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["game_id", "state_index"] + [f"z_{c}" for c in CONFIG_IDS])
        for g, i, row in zip(vectors.game_ids, vectors.state_indices, vectors.z):
            w.writerow([g, int(i)] + [float(v) for v in row])
    return path


def read_response_vectors_csv(path) -> ResponseVectorSet:
    games, indices, rows = [], [], []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            games.append(rec["game_id"])
            indices.append(int(rec["state_index"]))
            rows.append([float(rec[f"z_{c}"]) for c in CONFIG_IDS])
    return ResponseVectorSet(z=np.asarray(rows, dtype=np.float64),
                             game_ids=games,
                             state_indices=np.asarray(indices, dtype=np.int64))


def write_clusters_csv(vectors: ResponseVectorSet, labels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["game_id", "state_index", "cluster"]
                   + [f"z_{c}" for c in CONFIG_IDS])
        for g, i, lab, row in zip(vectors.game_ids, vectors.state_indices,
                                  labels, vectors.z):
            w.writerow([g, int(i), int(lab)] + [float(v) for v in row])
    return path


def write_profiles_csv(profiles: ClusterProfiles, path):
    """Pooled rows carry mean profiles; per-game rows carry compositions."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "cluster", "n", "proportion"]
                   + [f"mean_z_{c}" for c in CONFIG_IDS])
        for c in range(profiles.k):
            means = ["" if np.isnan(v) else float(v) for v in profiles.means[c]]
            w.writerow(["pooled", c, int(profiles.counts[c]),
                        float(profiles.proportions[c])] + means)
        for g in sorted(profiles.per_game):
            for c in range(profiles.k):
                w.writerow([f"game:{g}", c, "",
                            float(profiles.per_game[g][c])] + [""] * 6)
    return path


def write_silhouette_csv(results: dict[str, SilhouetteResult], path):
    """One row per (scope, cluster) plus an `overall` row per scope."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "cluster", "n", "mean_score"])
        for scope in results:
            res = results[scope]
            for c in sorted(res.per_cluster):
                n_c = int((res.labels == c).sum())
                w.writerow([scope, c, n_c, float(res.per_cluster[c])])
            w.writerow([scope, "overall", len(res.scores), float(res.overall)])
    return path


def write_tsne_csv(rows, path):
    """rows: iterable of (scope, game_id, state_index, x, y)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "game_id", "state_index", "x", "y"])
        for scope, g, i, x, y in rows:
            w.writerow([scope, g, int(i), float(x), float(y)])
    return path
