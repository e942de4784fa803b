"""Training loop: schedule, optimizer policy, descent, reproducibility."""

import numpy as np
import pytest
import torch

from ablation_lab.config import CONFIGS
from ablation_lab.errors import NoValidStates, NonFiniteLoss
from ablation_lab.ingest import block_split, compute_mean_frame
from ablation_lab.nncore import forward, init_network
from ablation_lab.sampler import assemble_batch, valid_indices
from ablation_lab.training import (TrainSchedule, _optimizer, evaluate_accuracy,
                                   history_rows,
                                   predict_true_action_probabilities, train)

from conftest import make_learnable_store, make_store

torch.set_num_threads(1)

# brightness rule separates fast at a hot learning rate
FAST = TrainSchedule(quasi_epochs=3, batches_per_epoch=25, batch_size=32,
                     lr_initial=1e-2, seed=0)


def learnable_setup(seed=0):
    store = make_learnable_store(n_per_action=80, n_actions=2, seed=seed)
    split = block_split(store, block_size=10, seed=0)
    compute_mean_frame(store, split)
    return store, split


# ---------------------------------------------------------------------------
# Schedule

def test_schedule_defaults():
    s = TrainSchedule()
    assert s.quasi_epochs == 150
    assert s.batches_per_epoch == 200
    assert s.batch_size == 64
    assert s.lr_initial == 1e-3
    assert s.lr_after_epoch_100 == 1e-4
    assert s.weight_decay == 1e-2
    assert s.grad_clip_norm == 1.0


def test_learning_rate_step_at_epoch_100():
    s = TrainSchedule()
    assert s.learning_rate(1) == 1e-3
    assert s.learning_rate(100) == 1e-3
    assert s.learning_rate(101) == 1e-4
    assert s.learning_rate(150) == 1e-4


def test_optimizer_decays_matrices_only():
    net = init_network(CONFIGS["A"], seed=0, topology="toy")
    opt = _optimizer(net, TrainSchedule())
    assert isinstance(opt, torch.optim.AdamW)
    decay, no_decay = opt.param_groups
    assert decay["weight_decay"] == 1e-2
    assert no_decay["weight_decay"] == 0.0
    assert all(p.dim() > 1 for p in decay["params"])
    assert all(p.dim() <= 1 for p in no_decay["params"])
    n_params = sum(1 for _ in net.parameters())
    assert len(decay["params"]) + len(no_decay["params"]) == n_params
    assert decay["betas"] == (0.9, 0.999)
    assert decay["eps"] == 1e-8


# ---------------------------------------------------------------------------
# Training descent and bookkeeping

def test_training_learns_brightness_rule():
    store, split = learnable_setup()
    model = train(store, split, CONFIGS["D"], FAST, topology="toy")
    assert len(model.history) == FAST.quasi_epochs
    assert model.history[-1].train_loss < model.history[0].train_loss
    assert model.history[-1].val_accuracy >= 0.9
    assert model.split_fingerprint == split.fingerprint()
    assert model.game_id == store.game_id
    assert model.mean_frame is not None
    rows = history_rows(model)
    assert rows[0] == (1, model.history[0].train_loss,
                       model.history[0].val_accuracy, FAST.lr_initial)


def test_training_reproducible_bitwise():
    store, split = learnable_setup()
    a = train(store, split, CONFIGS["D"], FAST, topology="toy")
    b = train(store, split, CONFIGS["D"], FAST, topology="toy")
    for ea, eb in zip(a.history, b.history):
        assert ea.train_loss == eb.train_loss
        assert ea.val_accuracy == eb.val_accuracy
    sa, sb = a.net.state_dict(), b.net.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)


def test_training_seed_changes_outcome():
    store, split = learnable_setup()
    a = train(store, split, CONFIGS["D"], FAST, topology="toy")
    other = TrainSchedule(quasi_epochs=3, batches_per_epoch=25, batch_size=32,
                          lr_initial=1e-2, seed=1)
    b = train(store, split, CONFIGS["D"], other, topology="toy")
    sa, sb = a.net.state_dict(), b.net.state_dict()
    assert any(not torch.equal(sa[k], sb[k]) for k in sa)


def test_training_aborts_on_nonfinite_loss():
    store, split = learnable_setup()
    diverging = TrainSchedule(quasi_epochs=1, batches_per_epoch=5,
                              batch_size=8, lr_initial=float("inf"), seed=0)
    with pytest.raises(NonFiniteLoss):
        train(store, split, CONFIGS["D"], diverging, topology="toy")


def test_training_requires_valid_states():
    # episodes shorter than the past window leave config A nothing to train on
    store = make_store(episode_lengths=(30, 30))
    split = block_split(store, block_size=10, seed=0)
    with pytest.raises(NoValidStates):
        train(store, split, CONFIGS["A"], FAST, topology="toy")


# ---------------------------------------------------------------------------
# Evaluation

def test_evaluate_accuracy_matches_manual_argmax():
    store, split = learnable_setup()
    model = train(store, split, CONFIGS["D"], FAST, topology="toy")
    got = evaluate_accuracy(model, store, split, "val")
    idx = valid_indices(store, CONFIGS["D"], split, "val")
    batch = assemble_batch(store, idx, CONFIGS["D"], model.mean_frame)
    logits = forward(model.net, batch).logits.numpy()
    want = float(np.mean(np.argmax(logits, axis=1) == store.actions[idx]))
    assert got == want


def test_evaluate_accuracy_deterministic():
    store, split = learnable_setup()
    model = train(store, split, CONFIGS["F"], FAST, topology="toy")
    assert (evaluate_accuracy(model, store, split, "val")
            == evaluate_accuracy(model, store, split, "val"))
    # the train partition is evaluable too
    train_acc = evaluate_accuracy(model, store, split, "train")
    assert 0.0 <= train_acc <= 1.0


def test_predicted_probabilities_match_softmax():
    store, split = learnable_setup()
    model = train(store, split, CONFIGS["D"], FAST, topology="toy")
    idx = valid_indices(store, CONFIGS["D"], split, "val")[:7]
    probs = predict_true_action_probabilities(model, store, idx)
    assert probs.shape == (7,)
    assert probs.dtype == np.float64
    assert np.all((probs > 0) & (probs < 1))
    batch = assemble_batch(store, idx, CONFIGS["D"], model.mean_frame)
    logits = forward(model.net, batch).logits.numpy().astype(np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    soft = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    want = soft[np.arange(7), store.actions[idx]]
    assert np.max(np.abs(probs - want)) < 1e-12


def test_predicted_probabilities_reject_empty():
    store, split = learnable_setup()
    model = train(store, split, CONFIGS["D"], FAST, topology="toy")
    with pytest.raises(NoValidStates):
        predict_true_action_probabilities(model, store, np.array([], dtype=np.int64))
