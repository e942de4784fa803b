"""The six-configuration study: orchestration, rule checks, drop matrix.

The headline artifact is the normalized pairwise drop matrix: for models
m, n and one game, entry(m, n) = 100 * (Acc_m - Acc_n) / (Acc_n - Common),
the accuracy change from model n to model m in percent of model n's
margin over the common-choice baseline, aggregated as the median over
games.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CONFIG_IDS, CONFIGS
from .errors import AblationLabError, DegenerateDenominator, MissingModel
from .ingest import SplitAssignment, common_choice_accuracy
from .nncore import Topology
from .store import ReplayStore
from .training import TrainSchedule, TrainedModel, evaluate_accuracy, train

RULES = ("A>B", "C>D", "A>C", "E>F", "A>E", "B>D", "B>F", "min>common")


@dataclass
class GameResult:
    """Validation accuracies of one game's six models plus the baseline."""

    game_id: str
    accuracies: dict[str, float]          # config id -> val accuracy
    common_choice: float
    n_states: int = 0
    n_train: int = 0
    n_val: int = 0
    failures: dict[str, str] = field(default_factory=dict)  # config id -> error kind
    models: dict[str, TrainedModel] = field(default_factory=dict, repr=False)


def run_ablation(store: ReplayStore, split: SplitAssignment,
                 schedule: TrainSchedule | None = None,
                 topology: Topology | str = "paper",
                 config_ids=CONFIG_IDS, keep_models: bool = True,
                 progress=None) -> GameResult:
    """Train and evaluate every requested configuration on a shared split.

    A configuration that fails to train is recorded under ``failures``
    instead of aborting the remaining ones.
    """
    schedule = schedule or TrainSchedule()
    result = GameResult(
        game_id=store.game_id,
        accuracies={},
        common_choice=common_choice_accuracy(store, split),
        n_states=store.n_states,
        n_train=int(split.indices("train").size),
        n_val=int(split.indices("val").size))
    for cid in config_ids:
        config = CONFIGS[cid]
        try:
            model = train(store, split, config, schedule, topology)
            result.accuracies[cid] = evaluate_accuracy(model, store, split, "val")
            if keep_models:
                result.models[cid] = model
        except AblationLabError as exc:
            result.failures[cid] = exc.kind
        if progress is not None:
            progress(store.game_id, cid, result.accuracies.get(cid),
                     result.failures.get(cid))
    return result


@dataclass
class AblationMatrix:
    """Median normalized drops (percent) with their per-game slices."""

    model_ids: tuple[str, ...]
    median: np.ndarray                       # [6, 6] float64
    per_game: dict[str, np.ndarray]          # game -> [6, 6]; NaN = excluded
    excluded: dict[tuple[str, str], list[str]]


def _game_matrix(result: GameResult, ids) -> np.ndarray:
    m = np.zeros((len(ids), len(ids)), dtype=np.float64)
    for i, row in enumerate(ids):
        for j, col in enumerate(ids):
            if i == j:
                continue
            denom = result.accuracies[col] - result.common_choice
            if denom <= 0:
                m[i, j] = np.nan
            else:
                m[i, j] = 100.0 * (result.accuracies[row]
                                   - result.accuracies[col]) / denom
    return m


def normalized_drop_matrix(results, model_ids=CONFIG_IDS) -> AblationMatrix:
    """Aggregate per-game normalized drops into entrywise medians.

    A game whose column model fails to beat the baseline contributes
    nothing to that entry; if that empties an entry entirely the matrix
    is undefined there and an error is raised.
    """
    results = list(results)
    ids = tuple(model_ids)
    for r in results:
        missing = [c for c in ids if c not in r.accuracies]
        if missing:
            raise MissingModel(missing[0])
    per_game = {r.game_id: _game_matrix(r, ids) for r in results}
    median = np.zeros((len(ids), len(ids)), dtype=np.float64)
    excluded: dict[tuple[str, str], list[str]] = {}
    for i, row in enumerate(ids):
        for j, col in enumerate(ids):
            if i == j:
                continue
            values, dropped = [], []
            for r in results:
                v = per_game[r.game_id][i, j]
                if np.isfinite(v):
                    values.append(v)
                else:
                    dropped.append(r.game_id)
            if dropped:
                excluded[(row, col)] = dropped
            if not values:
                raise DegenerateDenominator(row, col)
            median[i, j] = float(np.median(values))
    return AblationMatrix(model_ids=ids, median=median, per_game=per_game,
                          excluded=excluded)


def rule_check(results, model_ids=CONFIG_IDS) -> dict:
    """Count games fulfilling each expected strict ordering."""
    results = list(results)
    counts = dict.fromkeys(RULES, 0)
    for r in results:
        missing = [c for c in model_ids if c not in r.accuracies]
        if missing:
            raise MissingModel(missing[0])
        acc = r.accuracies
        for rule in RULES[:-1]:
            a, b = rule.split(">")
            if acc[a] > acc[b]:
                counts[rule] += 1
        if min(acc[c] for c in model_ids) > r.common_choice:
            counts["min>common"] += 1
    return {"games": len(results), "counts": counts}


# ---------------------------------------------------------------------------
# CSV / JSON emission and re-ingestion

def write_game_results_csv(results, path) -> Path:
    path = Path(path)
    ids = CONFIG_IDS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["game_id", "n_states", "n_train", "n_val", "common_choice"]
                   + [f"acc_{c}" for c in ids] + ["failures"])
        for r in results:
            # floats go through str() -> shortest round-trip repr, so parsing
            # the file back recovers them exactly
            w.writerow([r.game_id, r.n_states, r.n_train, r.n_val,
                        float(r.common_choice)]
                       + [float(r.accuracies[c]) if c in r.accuracies else ""
                          for c in ids]
                       + [";".join(f"{c}:{k}" for c, k in sorted(r.failures.items()))])
    return path


def read_game_results_csv(path) -> list[GameResult]:
    results = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            acc = {c: float(row[f"acc_{c}"]) for c in CONFIG_IDS if row[f"acc_{c}"]}
            failures = {}
            if row.get("failures"):
                failures = dict(item.split(":", 1)
                                for item in row["failures"].split(";"))
            results.append(GameResult(
                game_id=row["game_id"],
                accuracies=acc,
                common_choice=float(row["common_choice"]),
                n_states=int(row["n_states"]),
                n_train=int(row["n_train"]),
                n_val=int(row["n_val"]),
                failures=failures))
    return results


def write_drop_matrix_csv(matrix: AblationMatrix, path) -> Path:
    """Long format: one row per (row model, col model) pair."""
    path = Path(path)
    games = sorted(matrix.per_game)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row_model", "col_model", "median"] + [f"game:{g}" for g in games])
        for i, row in enumerate(matrix.model_ids):
            for j, col in enumerate(matrix.model_ids):
                cells = []
                for g in games:
                    v = matrix.per_game[g][i, j]
                    cells.append(float(v) if np.isfinite(v) else "")
                w.writerow([row, col, float(matrix.median[i, j])] + cells)
    return path


def write_rules_json(check: dict, path) -> Path:
    path = Path(path)
    payload = {"games": check["games"],
               "rules": list(RULES),
               "counts": {r: check["counts"][r] for r in RULES}}
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path
