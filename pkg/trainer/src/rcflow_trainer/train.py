"""Conditional flow matching training on the linear clean-to-noisy path.

For each sample: H0 = H (clean), H1 = H + N with N ~ CN(0, 10^(-SNR/10)) and
the SNR drawn per batch from the configured set; the state is
H_t = (1 - t) H0 + t H1 = H0 + t N with t ~ logit-normal (sigmoid of a unit
normal). The network regresses the path velocity H1 - H0 = N under a mean
squared error, and an exponential moving average of the weights is what gets
exported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import load_channels, to_planes
from .graph import GraphModel, build_toy_graph


@dataclass
class TrainConfig:
    dataset: str
    out_dir: str = "."
    base_channels: int = 8
    channel_mults: tuple = (1, 2)
    res_blocks: int = 1
    time_embed_dim: int = 32
    time_mlp_dim: int | None = None
    groups: int = 4
    snr_set: list = field(default_factory=lambda: [0.0])
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 2e-3
    ema_decay: float = 0.999
    seed: int = 0
    fixture_count: int = 24

    def __post_init__(self):
        if not self.snr_set:
            raise ValueError("snr_set must be non-empty")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        self.channel_mults = tuple(self.channel_mults)

    @classmethod
    def from_json(cls, payload: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)


class DivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def snr_to_noise_std(snr_db: float) -> float:
    """Channel-domain convention: complex noise variance 10^(-SNR/10) on a
    unit-power channel."""
    return 10.0 ** (-snr_db / 20.0)


def cfm_batch(h0: torch.Tensor, snr_db: float, gen: torch.Generator):
    """Draw (state, t, target) for one batch. ``h0`` is (B, 2, H, W)."""
    sigma = snr_to_noise_std(snr_db)
    noise = torch.randn(h0.shape, generator=gen) * (sigma / math.sqrt(2.0))
    t = torch.sigmoid(torch.randn(h0.shape[0], generator=gen))
    state = h0 + t[:, None, None, None] * noise
    return state, t, noise


@dataclass
class TrainResult:
    model: GraphModel
    ema_weights: dict[str, torch.Tensor]
    epoch_losses: list[float]


def train(config: TrainConfig) -> TrainResult:
    ds = load_channels(config.dataset)
    if len(ds) < config.batch_size:
        raise ValueError(f"dataset holds {len(ds)} samples, fewer than one batch")
    data = torch.from_numpy(to_planes(ds.samples))

    spec = build_toy_graph(config.base_channels, config.channel_mults, config.res_blocks,
                           config.time_embed_dim, config.time_mlp_dim, config.groups)
    model = GraphModel(spec, seed=config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.epochs)
    ema = {k: v.detach().clone() for k, v in model.params.items()}

    gen = torch.Generator().manual_seed(config.seed)
    losses = []
    for epoch in range(config.epochs):
        perm = torch.randperm(len(ds), generator=gen)
        epoch_loss, batches = 0.0, 0
        for start in range(0, len(ds), config.batch_size):
            idx = perm[start : start + config.batch_size]
            snr_idx = int(torch.randint(len(config.snr_set), (1,), generator=gen))
            state, t, target = cfm_batch(data[idx], float(config.snr_set[snr_idx]), gen)
            loss = torch.mean((model(state, t) - target) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                for k, p in model.params.items():
                    ema[k].mul_(config.ema_decay).add_(p, alpha=1.0 - config.ema_decay)
            epoch_loss += loss.item()
            batches += 1
        sched.step()
        mean_loss = epoch_loss / batches
        if not np.isfinite(mean_loss):
            raise DivergedError(epoch)
        losses.append(mean_loss)
    return TrainResult(model=model, ema_weights=ema, epoch_losses=losses)
