"""Optimization of one (game, configuration) model, plus evaluation.

The schedule is fixed across games: 150 quasi-epochs of 200 uniformly
sampled batches of 64, AdamW with decoupled weight decay 1e-2 (biases
and normalization parameters excluded), global gradient-norm clipping
at 1.0, and a learning-rate drop from 1e-3 to 1e-4 after epoch 100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import CONFIG_IDS, ModelConfig
from .errors import NoValidStates, NonFiniteLoss
from .ingest import SplitAssignment, compute_mean_frame
from .nncore import (ActionPredictionNet, Topology, forward, init_network,
                     loss)
from .sampler import assemble_batch, sample_batch, valid_indices
from .store import ReplayStore

EVAL_BATCH = 256


@dataclass
class TrainSchedule:
    """The shared training protocol; defaults are the published values."""

    quasi_epochs: int = 150
    batches_per_epoch: int = 200
    batch_size: int = 64
    lr_initial: float = 1e-3
    lr_after_epoch_100: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip_norm: float = 1.0
    seed: int = 0

    def learning_rate(self, epoch: int) -> float:
        """Learning rate in force during a given 1-based epoch."""
        return self.lr_initial if epoch <= 100 else self.lr_after_epoch_100


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainedModel:
    """Parameters plus everything needed to reproduce or audit them."""

    net: ActionPredictionNet
    config: ModelConfig
    schedule: TrainSchedule
    history: list[EpochStats]
    split_fingerprint: str
    game_id: str
    subject_id: str | None = None
    mean_frame: np.ndarray | None = field(default=None, repr=False)


def _optimizer(net: ActionPredictionNet, schedule: TrainSchedule):
    decay, no_decay = [], []
    for p in net.parameters():
        (decay if p.dim() > 1 else no_decay).append(p)
    groups = [{"params": decay, "weight_decay": schedule.weight_decay},
              {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.AdamW(groups, lr=schedule.lr_initial,
                             betas=(0.9, 0.999), eps=1e-8)


def _batch_rng(schedule: TrainSchedule, config: ModelConfig) -> np.random.Generator:
    # one independent, reproducible stream per (seed, configuration)
    return np.random.default_rng(
        np.random.SeedSequence([schedule.seed, CONFIG_IDS.index(config.id)]))


def train(store: ReplayStore, split: SplitAssignment, config: ModelConfig,
          schedule: TrainSchedule | None = None,
          topology: Topology | str = "paper",
          game_id: str | None = None) -> TrainedModel:
    """Train one configuration on one store; deterministic per inputs."""
    schedule = schedule or TrainSchedule()
    pool = valid_indices(store, config, split, "train")
    if pool.size == 0:
        raise NoValidStates(f"no valid train states for configuration {config.id}")
    mean_frame = store.mean_frame
    if mean_frame is None:
        mean_frame = compute_mean_frame(store, split)

    torch.manual_seed(schedule.seed)
    net = init_network(config, schedule.seed, topology)
    opt = _optimizer(net, schedule)
    rng = _batch_rng(schedule, config)

    history: list[EpochStats] = []
    model = TrainedModel(net=net, config=config, schedule=schedule,
                         history=history, split_fingerprint=split.fingerprint(),
                         game_id=game_id or store.game_id,
                         subject_id=store.subject_id, mean_frame=mean_frame)
    global_step = 0
    for epoch in range(1, schedule.quasi_epochs + 1):
        lr = schedule.learning_rate(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        epoch_loss = 0.0
        for _ in range(schedule.batches_per_epoch):
            batch = sample_batch(store, split, "train", config, mean_frame,
                                 schedule.batch_size, rng)
            trace = forward(net, batch, mode="train")
            batch_loss = loss(trace, batch.actions)
            value = float(batch_loss.detach())
            if not math.isfinite(value):
                raise NonFiniteLoss(global_step, value)
            opt.zero_grad(set_to_none=True)
            batch_loss.backward()
            torch.nn.utils.clip_grad_norm_(net.parameters(), schedule.grad_clip_norm)
            opt.step()
            epoch_loss += value
            global_step += 1
        val_acc = evaluate_accuracy(model, store, split, "val")
        history.append(EpochStats(epoch, epoch_loss / schedule.batches_per_epoch,
                                  val_acc, lr))
    return model


def _eval_logits(model: TrainedModel, store: ReplayStore,
                 indices: np.ndarray) -> np.ndarray:
    """Eval-mode logits for explicit state indices, batched."""
    out = np.empty((indices.size, 18), dtype=np.float32)
    for lo in range(0, indices.size, EVAL_BATCH):
        chunk = indices[lo:lo + EVAL_BATCH]
        batch = assemble_batch(store, chunk, model.config, model.mean_frame)
        trace = forward(model.net, batch, mode="eval")
        out[lo:lo + chunk.size] = trace.logits.detach().numpy()
    return out


def evaluate_accuracy(model: TrainedModel, store: ReplayStore,
                      split: SplitAssignment, label: str = "val") -> float:
    """Exact-match accuracy over every valid state of one split label.

    Argmax ties break toward the lowest action index; a near-miss action
    (e.g. FIRE for UP+FIRE) counts as incorrect like any other.
    """
    idx = valid_indices(store, model.config, split, label)
    if idx.size == 0:
        raise NoValidStates(f"no valid {label} states for configuration "
                            f"{model.config.id}")
    logits = _eval_logits(model, store, idx)
    predicted = np.argmax(logits, axis=1)
    return float(np.mean(predicted == store.actions[idx]))


def predict_true_action_probabilities(model: TrainedModel, store: ReplayStore,
                                      indices) -> np.ndarray:
    """p(demonstrated action | state) per index, eval mode, float64."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise NoValidStates("no states to evaluate")
    logits = _eval_logits(model, store, idx).astype(np.float64)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs[np.arange(idx.size), store.actions[idx]]


def history_rows(model: TrainedModel) -> list[tuple[int, float, float, float]]:
    """History as plain rows (epoch, train_loss, val_accuracy, lr) for CSV."""
    return [(h.epoch, h.train_loss, h.val_accuracy, h.learning_rate)
            for h in model.history]
