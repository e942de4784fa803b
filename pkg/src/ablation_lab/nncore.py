"""The action-prediction network and its gradient/checkpoint contracts.

Three optional information branches feed one classifier:

* image encoder over the stacked (t-1, t) frames — three convolution
  stages, each batch-normalized, GELU-activated and downsampled by an
  anti-aliasing binomial blur-pool; then two 1x1 convolutions and a
  dense feature layer;
* a gaze encoder with the same topology over the 4-channel gaze stack,
  fused with the image features by plain averaging;
* a past branch that reuses the *same* encoders on three earlier states,
  compresses their features and merges them through a learned sigmoid
  gate: ``fused = c + g * p``, so a closed gate recovers the past-free
  path exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, get_config
from .errors import ShapeMismatch
from .sampler import Batch, N_PAST

N_ACTIONS = 18
CKPT_MAGIC = b"ALK1"


@dataclass(frozen=True)
class Topology:
    """Concrete layer sizes; the layer inventory itself never changes."""

    conv_channels: tuple[int, int, int] = (32, 64, 64)
    conv_kernel: int = 5
    head_channels: tuple[int, int] = (32, 16)
    feature_dim: int = 48

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(conv_channels=tuple(d["conv_channels"]),
                   conv_kernel=int(d["conv_kernel"]),
                   head_channels=tuple(d["head_channels"]),
                   feature_dim=int(d["feature_dim"]))


# paper: the published layer sizes; desk: same inventory at laptop scale;
# toy: minimal widths for finite-difference gradient checks.
TOPOLOGIES = {
    "paper": Topology(),
    "desk": Topology(conv_channels=(8, 16, 16), conv_kernel=3,
                     head_channels=(8, 16), feature_dim=48),
    "toy": Topology(conv_channels=(2, 3, 3), conv_kernel=3,
                    head_channels=(2, 1), feature_dim=6),
}


class BlurPool(nn.Module):
    """Anti-aliased downsampling: fixed 3-tap binomial blur, then stride 2."""

    def __init__(self, channels: int):
        super().__init__()
        k = torch.tensor([1.0, 2.0, 1.0])
        k = torch.outer(k, k)
        k = k / k.sum()  # [1,2,1] x [1,2,1] / 16
        self.register_buffer("kernel", k.expand(channels, 1, 3, 3).contiguous())
        self.channels = channels

    def forward(self, x):
        return nn.functional.conv2d(x, self.kernel, stride=2, padding=1,
                                    groups=self.channels)


class StateEncoder(nn.Module):
    """Frames (or gaze maps) -> feature vector of ``feature_dim`` units."""

    def __init__(self, in_channels: int, topology: Topology):
        super().__init__()
        c1, c2, c3 = topology.conv_channels
        k = topology.conv_kernel
        h1, h2 = topology.head_channels
        stages = []
        for cin, cout in ((in_channels, c1), (c1, c2), (c2, c3)):
            stages += [nn.Conv2d(cin, cout, k, padding=k // 2),
                       nn.BatchNorm2d(cout), nn.GELU(), BlurPool(cout)]
        self.stages = nn.Sequential(*stages)
        self.head = nn.Sequential(nn.Conv2d(c3, h1, 1), nn.GELU(),
                                  nn.Conv2d(h1, h2, 1), nn.GELU())
        # 84 -> 42 -> 21 -> 11 under three stride-2 blur-pools
        self.fc = nn.Linear(h2 * 11 * 11, topology.feature_dim)
        self.act = nn.GELU()

    def forward(self, x):
        x = self.head(self.stages(x))
        return self.act(self.fc(x.flatten(1)))


class ActionPredictionNet(nn.Module):
    """One ablation cell: branches exist only when the config enables them."""

    def __init__(self, config: ModelConfig, topology: Topology):
        super().__init__()
        self.config = config
        self.topology = topology
        self.seed = None  # set by init_network
        feat = topology.feature_dim
        self.image_encoder = StateEncoder(2, topology)
        self.gaze_encoder = StateEncoder(4, topology) if config.gaze else None
        if config.past:
            self.past_compress = nn.Sequential(
                nn.Linear(N_PAST * feat, 2 * feat), nn.GELU(),
                nn.Linear(2 * feat, feat))
            self.gate = nn.Linear(2 * feat, feat)
        else:
            self.past_compress = None
            self.gate = None
        self.classifier = nn.Linear(feat, N_ACTIONS)

    def encode_state(self, frames, gaze):
        c = self.image_encoder(frames)
        if self.gaze_encoder is not None:
            c = (c + self.gaze_encoder(gaze)) / 2
        return c

    def forward(self, current, gaze=None, past_current=None, past_gaze=None):
        c = self.encode_state(current, gaze)
        gate_values = None
        if self.config.past:
            feats = [self.encode_state(past_current[:, k],
                                       None if past_gaze is None else past_gaze[:, k])
                     for k in range(N_PAST)]
            p = self.past_compress(torch.cat(feats, dim=1))
            gate_values = torch.sigmoid(self.gate(torch.cat([c, p], dim=1)))
            c = c + gate_values * p
        return self.classifier(c), gate_values


@dataclass
class ForwardTrace:
    """Outputs of one forward pass."""

    logits: torch.Tensor               # [B, 18]
    probabilities: torch.Tensor        # [B, 18], softmax rows
    gate_values: torch.Tensor | None   # [B, feat] in (0,1); iff config.past


def init_network(config: ModelConfig, seed: int,
                 topology: Topology | str = "paper") -> ActionPredictionNet:
    """Build a network with deterministic fan-in-scaled uniform weights.

    Biases start at zero and batch-norm at identity, so two calls with
    the same (config, seed, topology) are bit-identical.
    """
    if isinstance(topology, str):
        topology = TOPOLOGIES[topology]
    net = ActionPredictionNet(config, topology)
    gen = torch.Generator().manual_seed(int(seed))
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            fan_in = module.weight.shape[1:].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.BatchNorm2d):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()
    net.seed = int(seed)
    net.eval()
    return net


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def _check_batch(config: ModelConfig, batch: Batch) -> None:
    b = batch.current.shape[0]
    if batch.current.shape[1:] != (2, 84, 84):
        raise ShapeMismatch("current", (b, 2, 84, 84), batch.current.shape)
    if config.gaze:
        if batch.gaze is None or batch.gaze.shape != (b, 4, 84, 84):
            raise ShapeMismatch("gaze", (b, 4, 84, 84),
                                None if batch.gaze is None else batch.gaze.shape)
    if config.past:
        want = (b, N_PAST, 2, 84, 84)
        if batch.past_current is None or batch.past_current.shape != want:
            raise ShapeMismatch("past_current", want,
                                None if batch.past_current is None
                                else batch.past_current.shape)
        if config.gaze:
            want_g = (b, N_PAST, 4, 84, 84)
            if batch.past_gaze is None or batch.past_gaze.shape != want_g:
                raise ShapeMismatch("past_gaze", want_g,
                                    None if batch.past_gaze is None
                                    else batch.past_gaze.shape)


def _to_tensors(batch: Batch):
    t = lambda a: None if a is None else torch.from_numpy(np.ascontiguousarray(a))
    return (t(batch.current), t(batch.gaze), t(batch.past_current), t(batch.past_gaze))


def forward(net: ActionPredictionNet, batch: Batch, mode: str = "eval") -> ForwardTrace:
    """Run the network on a sampler batch; returns logits, softmax, gates.

    ``train`` mode normalizes with batch statistics (and updates running
    stats); ``eval`` mode uses the stored running statistics.
    """
    _check_batch(net.config, batch)
    current, gaze, past_current, past_gaze = _to_tensors(batch)
    was_training = net.training
    net.train(mode == "train")
    try:
        with torch.enable_grad() if mode == "train" else torch.no_grad():
            logits, gates = net(current, gaze, past_current, past_gaze)
    finally:
        net.train(was_training)
    probs = torch.softmax(logits.detach(), dim=1)
    return ForwardTrace(logits=logits, probabilities=probs, gate_values=gates)


def loss(trace, actions) -> torch.Tensor:
    """Mean negative log-probability of the demonstrated actions (Eq. form:
    stable log-sum-exp, never a softmax followed by log)."""
    logits = trace.logits if isinstance(trace, ForwardTrace) else trace
    if not torch.is_tensor(logits):
        logits = torch.as_tensor(np.asarray(logits), dtype=torch.float32)
    acts = torch.as_tensor(np.asarray(actions), dtype=torch.long)
    logp = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -logp[torch.arange(logits.shape[0]), acts].mean()


def _bn_state(net: nn.Module):
    return {name: (m.running_mean.clone(), m.running_var.clone(),
                   m.num_batches_tracked.clone())
            for name, m in net.named_modules() if isinstance(m, nn.BatchNorm2d)}


def _restore_bn_state(net: nn.Module, state) -> None:
    for name, m in net.named_modules():
        if isinstance(m, nn.BatchNorm2d):
            mean, var, count = state[name]
            m.running_mean.copy_(mean)
            m.running_var.copy_(var)
            m.num_batches_tracked.copy_(count)


def gradients(net: ActionPredictionNet, batch: Batch, actions=None,
              mode: str = "train") -> dict[str, np.ndarray]:
    """Exact loss gradients per named parameter, side-effect free.

    Batch-norm running statistics are restored afterwards so repeated
    calls at the same parameters return the same values.
    """
    acts = batch.actions if actions is None else actions
    _check_batch(net.config, batch)
    saved = _bn_state(net)
    net.zero_grad(set_to_none=True)
    was_training = net.training
    try:
        current, gaze, past_current, past_gaze = _to_tensors(batch)
        net.train(mode == "train")
        logits, _ = net(current, gaze, past_current, past_gaze)
        loss(logits, acts).backward()
        out = {name: p.grad.detach().numpy().copy()
               for name, p in net.named_parameters()}
    finally:
        net.train(was_training)
        with torch.no_grad():
            _restore_bn_state(net, saved)
        net.zero_grad(set_to_none=True)
    return out


# ---------------------------------------------------------------------------
# Checkpoints: one file = magic, JSON header, then float32 blobs in
# header order.  Integer batch-norm counters ride in the header itself.

def save_checkpoint(net: ActionPredictionNet, path, step: int = 0) -> Path:
    path = Path(path)
    tensors, blobs = [], []
    for name, p in net.named_parameters():
        tensors.append({"name": name, "shape": list(p.shape), "kind": "param"})
        blobs.append(p.detach().numpy().astype("<f4").tobytes())
    for name, b in net.named_buffers():
        if b.dtype in (torch.int64, torch.int32):
            continue
        tensors.append({"name": name, "shape": list(b.shape), "kind": "buffer"})
        blobs.append(b.detach().numpy().astype("<f4").tobytes())
    int_buffers = {name: int(b.item()) for name, b in net.named_buffers()
                   if b.dtype in (torch.int64, torch.int32)}
    header = {
        "config_id": net.config.id,
        "seed": net.seed,
        "step": int(step),
        "topology": net.topology.to_dict(),
        "tensors": tensors,
        "int_buffers": int_buffers,
    }
    raw = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[ActionPredictionNet, int]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ShapeMismatch("checkpoint magic", CKPT_MAGIC, "unknown")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        net = init_network(get_config(header["config_id"]),
                           header["seed"] if header["seed"] is not None else 0,
                           Topology.from_dict(header["topology"]))
        named = dict(net.named_parameters())
        named.update({n: b for n, b in net.named_buffers()})
        with torch.no_grad():
            for spec in header["tensors"]:
                n_elem = int(np.prod(spec["shape"])) if spec["shape"] else 1
                raw = fh.read(n_elem * 4)
                arr = np.frombuffer(raw, dtype="<f4").reshape(spec["shape"])
                named[spec["name"]].copy_(torch.from_numpy(arr.copy()))
            for name, value in header["int_buffers"].items():
                named[name].fill_(value)
    return net, int(header["step"])
