"""Command-line pipeline: synth / ingest / run / analyze.

Exit codes: 0 success, 2 validation failure (bad flags or bad input
data), 3 runtime failure.  Failures print one machine-readable JSON
object {kind, message, context} to standard error.  Thread use is
capped by the ABLATION_LAB_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
from pathlib import Path

from . import clustering as cl
from .ablation import (normalized_drop_matrix, read_game_results_csv,
                       rule_check, run_ablation, write_drop_matrix_csv,
                       write_game_results_csv, write_rules_json)
from .config import CONFIG_IDS
from .errors import AblationLabError, StoreExists
from .ingest import SessionRecording, block_split, build_replay, parse_label_file
from .nncore import TOPOLOGIES, save_checkpoint
from .store import ReplayStore
from .synth import KINDS, generate_recording
from .training import TrainSchedule, history_rows

# everything else maps to exit 2 (validation)
RUNTIME_KINDS = {"NonFiniteLoss", "DegenerateDenominator"}


def _emit_error(exc: Exception) -> int:
    if isinstance(exc, AblationLabError):
        payload = exc.to_json_dict()
        code = 3 if exc.kind in RUNTIME_KINDS else 2
    else:
        payload = {"kind": type(exc).__name__, "message": str(exc), "context": {}}
        code = 3
    print(json.dumps(payload), file=sys.stderr)
    return code


def _prepare_out(out_dir: Path, force: bool) -> Path:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise StoreExists(out_dir)
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _subject_from_stem(stem: str) -> str | None:
    """Recording files are named <game>_<subject>_... by convention."""
    parts = stem.split("_")
    return parts[1] if len(parts) >= 2 else None


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_ingest(args) -> int:
    sessions = []
    for label_path in args.labels:
        label_path = Path(label_path)
        sessions.append(SessionRecording(
            name=label_path.stem,
            labels=parse_label_file(label_path.read_text()),
            subject_id=_subject_from_stem(label_path.stem)))
    game_id = args.game or Path(args.labels[0]).stem.split("_")[0]
    store = build_replay(args.frames, sessions, game_id,
                         subject_filter=args.subject,
                         pixels_per_degree=args.ppd)
    store.save(args.out, force=args.force)
    store.gaze_maps()  # precompute the on-disk cache while frames are warm
    print(json.dumps({
        "game_id": store.game_id,
        "subject_id": store.subject_id,
        "n_states": store.n_states,
        "n_episodes": store.n_episodes,
        "dropped_missing_action": store.dropped_missing_action,
        "clamped_gaze_points": store.clamped_gaze_points,
        "out": str(args.out),
    }))
    return 0


def cmd_synth(args) -> int:
    label_path, frames_dir = generate_recording(
        args.kind, episodes=args.episodes, length=args.length,
        action_arity=args.arity, seed=args.seed, out_dir=args.out,
        force=args.force)
    print(json.dumps({
        "kind": args.kind,
        "episodes": args.episodes,
        "frames": args.episodes * args.length,
        "labels": str(label_path),
        "frames_dir": str(frames_dir),
    }))
    return 0


def cmd_run(args) -> int:
    out = _prepare_out(Path(args.out), args.force)
    store = ReplayStore.load(args.store)
    split = block_split(store, block_size=args.block_size,
                        val_fraction=args.val_fraction, seed=args.seed)
    schedule = TrainSchedule(quasi_epochs=args.epochs,
                             batches_per_epoch=args.batches,
                             batch_size=args.batch_size,
                             lr_initial=args.lr, seed=args.seed)
    config_ids = tuple(args.configs.replace(",", "").upper())

    def progress(game, cid, acc, failure):
        note = f"acc={acc:.4f}" if acc is not None else f"failed: {failure}"
        print(f"[{game}] config {cid}: {note}", file=sys.stderr)

    result = run_ablation(store, split, schedule, topology=args.net,
                          config_ids=config_ids, keep_models=True,
                          progress=progress)
    for cid, model in result.models.items():
        total = schedule.quasi_epochs * schedule.batches_per_epoch
        save_checkpoint(model.net, out / f"model_{cid}.ckpt", step=total)
        _write_csv(out / f"history_{cid}.csv",
                   ["epoch", "train_loss", "val_accuracy", "learning_rate"],
                   history_rows(model))
    write_game_results_csv([result], out / "game_results.csv")

    vectors_note = None
    if all(c in result.models for c in CONFIG_IDS):
        vectors = cl.collect_response_vectors(result.models, store, split)
        cl.write_response_vectors_csv(vectors, out / "response_vectors.csv")
    else:
        vectors_note = "response vectors need all six configurations"
    summary = {
        "game_id": result.game_id,
        "subject_id": store.subject_id,
        "split_fingerprint": split.fingerprint(),
        "topology": args.net,
        "schedule": {"quasi_epochs": schedule.quasi_epochs,
                     "batches_per_epoch": schedule.batches_per_epoch,
                     "batch_size": schedule.batch_size, "seed": schedule.seed},
        "common_choice": result.common_choice,
        "accuracies": result.accuracies,
        "failures": result.failures,
        "skipped": vectors_note,
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def _tsne_rows(scope, vectors, subsample, perplexity, iters, seed):
    """Embed (a subsample of) one vector set; None if perplexity won't fit."""
    import numpy as np
    n = len(vectors)
    take = min(n, subsample)
    if perplexity > (take - 1) / 3:
        return None
    if take < n:
        idx = np.sort(np.random.default_rng(seed).choice(n, take, replace=False))
    else:
        idx = np.arange(n)
    coords = cl.tsne_embed(vectors.z[idx], perplexity=perplexity, iters=iters,
                           seed=seed)
    return [(scope, vectors.game_ids[i], int(vectors.state_indices[i]),
             float(x), float(y))
            for i, (x, y) in zip(idx, coords)]


def cmd_analyze(args) -> int:
    out = _prepare_out(Path(args.out), args.force)
    results, vector_sets = [], []
    for rdir in args.results:
        rdir = Path(rdir)
        results.extend(read_game_results_csv(rdir / "game_results.csv"))
        vec_path = rdir / "response_vectors.csv"
        if vec_path.is_file():
            vector_sets.append(cl.read_response_vectors_csv(vec_path))
    write_game_results_csv(results, out / "game_results.csv")
    matrix = normalized_drop_matrix(results)
    write_drop_matrix_csv(matrix, out / "drop_matrix.csv")
    check = rule_check(results)
    write_rules_json(check, out / "rules.json")

    skipped = {}
    summary = {
        "games": [r.game_id for r in results],
        "rules": check["counts"],
        "excluded_entries": {f"{m},{n}": games
                             for (m, n), games in matrix.excluded.items()},
    }
    if vector_sets:
        pooled = cl.ResponseVectorSet.concatenate(vector_sets)
        model = cl.kmeans_fit(pooled.z, k=args.k, seed=args.seed,
                              fingerprint=pooled.fingerprint())
        labels = cl.assign(model, pooled.z)
        cl.write_clusters_csv(pooled, labels, out / "clusters.csv")
        profiles = cl.cluster_profiles(model, pooled, labels)
        cl.write_profiles_csv(profiles, out / "profiles.csv")

        sil_results = {}
        try:
            sil_results["pooled"] = cl.silhouette(
                pooled.z, labels, args.silhouette_subsample, seed=args.seed)
        except AblationLabError as exc:
            skipped["silhouette:pooled"] = exc.kind
        import numpy as np
        games_arr = np.asarray(pooled.game_ids)
        for g in sorted(set(pooled.game_ids)):
            mask = games_arr == g
            try:
                sil_results[f"game:{g}"] = cl.silhouette(
                    pooled.z[mask], labels[mask], args.silhouette_subsample,
                    seed=args.seed)
            except AblationLabError as exc:
                skipped[f"silhouette:{g}"] = exc.kind
        if sil_results:
            cl.write_silhouette_csv(sil_results, out / "silhouette.csv")

        tsne_rows = []
        pooled_rows = _tsne_rows("pooled", pooled, args.tsne_pooled,
                                 args.perplexity, args.tsne_iters, args.seed)
        if pooled_rows is None:
            skipped["tsne:pooled"] = "PerplexityTooLarge"
        else:
            tsne_rows.extend(pooled_rows)
        for g in sorted(set(pooled.game_ids)):
            mask = games_arr == g
            sub = cl.ResponseVectorSet(
                z=pooled.z[mask], game_ids=[g] * int(mask.sum()),
                state_indices=pooled.state_indices[mask])
            rows = _tsne_rows(f"game:{g}", sub, args.tsne_per_game,
                              args.perplexity, args.tsne_iters, args.seed)
            if rows is None:
                skipped[f"tsne:{g}"] = "PerplexityTooLarge"
            else:
                tsne_rows.extend(rows)
        if tsne_rows:
            cl.write_tsne_csv(tsne_rows, out / "tsne.csv")
        summary["clusters"] = {"k": args.k, "n_points": len(pooled),
                               "wcss": model.wcss,
                               "fingerprint": model.fingerprint}
    else:
        skipped["clustering"] = "no response_vectors.csv in result dirs"
    summary["skipped"] = skipped
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ablation-lab",
        description="Reverse-engineer periphery/gaze/past-state contributions "
                    "to action prediction from gameplay+eye-tracking recordings.")
    sub = p.add_subparsers(dest="command", required=True)

    pi = sub.add_parser("ingest", help="parse recordings into a replay store")
    pi.add_argument("--frames", required=True, help="frame image directory")
    pi.add_argument("--labels", required=True, nargs="+", help="label files")
    pi.add_argument("--out", required=True, help="store output directory")
    pi.add_argument("--subject", default=None, help="keep only this subject")
    pi.add_argument("--ppd", type=float, default=4.0,
                    help="pixels per degree on the 84x84 canvas")
    pi.add_argument("--game", default=None, help="game id (default: from filename)")
    pi.add_argument("--force", action="store_true")
    pi.set_defaults(func=cmd_ingest)

    ps = sub.add_parser("synth", help="generate a synthetic recording")
    ps.add_argument("--kind", required=True, choices=KINDS)
    ps.add_argument("--length", type=int, required=True, help="frames per episode")
    ps.add_argument("--episodes", type=int, default=1)
    ps.add_argument("--arity", type=int, default=4)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.add_argument("--force", action="store_true")
    ps.set_defaults(func=cmd_synth)

    pr = sub.add_parser("run", help="train configurations on one store")
    pr.add_argument("--store", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--configs", default=",".join(CONFIG_IDS))
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--epochs", type=int, default=TrainSchedule.quasi_epochs)
    pr.add_argument("--batches", type=int, default=TrainSchedule.batches_per_epoch)
    pr.add_argument("--batch-size", type=int, default=TrainSchedule.batch_size)
    pr.add_argument("--lr", type=float, default=TrainSchedule.lr_initial,
                    help="initial learning rate")
    pr.add_argument("--net", default="desk", choices=sorted(TOPOLOGIES),
                    help="topology preset (desk fits CPU budgets; paper is full width)")
    pr.add_argument("--block-size", type=int, default=50)
    pr.add_argument("--val-fraction", type=float, default=0.10)
    pr.add_argument("--force", action="store_true")
    pr.set_defaults(func=cmd_run)

    pa = sub.add_parser("analyze", help="aggregate run results into reports")
    pa.add_argument("--results", required=True, nargs="+",
                    help="one or more cmd_run output directories")
    pa.add_argument("--out", required=True)
    pa.add_argument("--k", type=int, default=cl.DEFAULT_K)
    pa.add_argument("--perplexity", type=float, default=cl.DEFAULT_PERPLEXITY)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--silhouette-subsample", type=int,
                    default=cl.SILHOUETTE_SUBSAMPLE)
    pa.add_argument("--tsne-pooled", type=int, default=cl.TSNE_POOLED_SUBSAMPLE)
    pa.add_argument("--tsne-per-game", type=int, default=cl.TSNE_GAME_SUBSAMPLE)
    pa.add_argument("--tsne-iters", type=int, default=1000)
    pa.add_argument("--force", action="store_true")
    pa.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    threads = os.environ.get("ABLATION_LAB_THREADS")
    if threads:
        import torch
        torch.set_num_threads(max(1, int(threads)))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AblationLabError as exc:
        return _emit_error(exc)
    except (OSError, ValueError) as exc:
        return _emit_error(exc)


if __name__ == "__main__":
    sys.exit(main())
