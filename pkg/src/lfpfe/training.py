"""Two-phase training loop shared by the reconstruction and denoising networks.

Phase 1 pre-trains the weights with every gate forced to 1. Phase 2 trains
weights and gate probabilities together with Gumbel-relaxed masks while the
temperature anneals. Each phase runs its own one-cycle schedule. The loss is
L1 on the final output only. After training the gates are switched to their
hard MAP values (or left in template mode when phase 2 is skipped).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .crnet import CRNet, tile_mean_baseline
from .dnnet import DNNet
from .lightfield import NoiseSpec, add_noise, angular_average
from .metrics import psnr, psnr_per_view, ssim
from .pfe import set_temperature

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 8
    pre_epochs: int = 8
    batch: int = 5
    patch: int = 16
    max_lr: float = 1e-3
    gate_lr_scale: float = 10.0
    warmup: float = 0.3
    tau_start: float = 1.0
    tau_end: float = 0.05
    tau_fraction: float = 0.4
    seed: int = 0
    steps_per_epoch: int | None = None
    finetune_epochs: int = 0
    log_every: int = 100

    def epoch_steps(self, n_scenes: int, h: int, w: int) -> int:
        """One epoch covers every non-overlapping patch position of every scene once."""
        if self.steps_per_epoch:
            return self.steps_per_epoch
        patches = n_scenes * math.ceil(h / self.patch) * math.ceil(w / self.patch)
        return max(math.ceil(patches / self.batch), 1)


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    tau: list[float] = field(default_factory=list)
    phase: list[str] = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class PatchSampler:
    """Random ``(B, M, N, p, p)`` crops from a stack of light fields."""

    def __init__(self, scenes: np.ndarray, patch: int):
        if len(scenes) == 0:
            raise ValueError("empty dataset")
        self.scenes = np.asarray(scenes, dtype=np.float32)
        h, w = self.scenes.shape[3:]
        if patch > h or patch > w:
            raise ValueError(f"patch {patch} larger than scenes {h}x{w}")
        self.patch = patch

    def sample(self, rng: np.random.Generator, batch: int) -> np.ndarray:
        K, M, N, H, W = self.scenes.shape
        p = self.patch
        idx = rng.integers(0, K, size=batch)
        xs = rng.integers(0, H - p + 1, size=batch)
        ys = rng.integers(0, W - p + 1, size=batch)
        return np.stack([self.scenes[i, :, :, x:x + p, y:y + p] for i, x, y in zip(idx, xs, ys)])


LossFn = Callable[[object, np.ndarray, float, np.random.Generator], ad.Tensor]


def fit(model, scenes: np.ndarray, cfg: TrainConfig, loss_fn: LossFn,
        callback: Callable[[int, str, float], None] | None = None) -> History:
    sampler = PatchSampler(scenes, cfg.patch)
    rng = np.random.default_rng(cfg.seed)
    K, _, _, H, W = sampler.scenes.shape
    per_epoch = cfg.epoch_steps(K, H, W)
    hist = History()
    t0 = time.perf_counter()

    phases = [("pre", cfg.pre_epochs, "template"), ("gated", cfg.epochs, "sampled"),
              ("finetune", cfg.finetune_epochs, "hard")]
    for phase, epochs, mode in phases:
        steps = epochs * per_epoch
        if steps == 0:
            continue
        model.set_gate_mode(mode)
        weights = model.weight_parameters()
        opt = ad.Adam(weights)
        gate_opt = None
        if mode == "sampled":
            gate_opt = ad.Adam([p for g in model.gate_banks() for p in g.parameters()])
        sched = ad.OneCycleSchedule(cfg.max_lr, steps, cfg.warmup)
        for step in range(steps):
            tau = 1.0
            if mode == "sampled":
                tau = set_temperature(step / per_epoch, epochs, cfg.tau_start, cfg.tau_end, cfg.tau_fraction)
            batch = sampler.sample(rng, cfg.batch)
            model.zero_grad()
            loss = loss_fn(model, batch, tau, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at {phase} step {step}")
            loss.backward()
            lr = sched(step)
            opt.step(lr)
            if gate_opt is not None:
                gate_opt.step(lr * cfg.gate_lr_scale)
            model.clip()
            hist.loss.append(value)
            hist.lr.append(lr)
            hist.tau.append(tau)
            hist.phase.append(phase)
            if cfg.log_every and (step % cfg.log_every == 0 or step == steps - 1):
                log.info("%s step %d/%d loss %.5f lr %.2e tau %.3f", phase, step, steps, value, lr, tau)
            if callback is not None:
                callback(step, phase, value)
    model.zero_grad()
    # without a gated phase the probabilities are untrained and the template stands
    model.set_gate_mode("hard" if cfg.epochs > 0 else "template")
    hist.seconds = time.perf_counter() - t0
    return hist


def cr_loss(model: CRNet, batch: np.ndarray, tau: float, rng) -> ad.Tensor:
    _, outs = model(ad.Tensor(batch), tau, rng)
    return ad.l1_loss(outs[-1], ad.Tensor(batch))


def make_dn_loss(sigma: float) -> LossFn:
    def dn_loss(model: DNNet, batch: np.ndarray, tau: float, rng) -> ad.Tensor:
        noisy = batch + rng.standard_normal(batch.shape).astype(np.float32) * np.float32(sigma / 255.0)
        return ad.l1_loss(model(ad.Tensor(noisy), tau, rng), ad.Tensor(batch))
    return dn_loss


def train_cr(model: CRNet, scenes: np.ndarray, cfg: TrainConfig, callback=None) -> History:
    return fit(model, scenes, cfg, cr_loss, callback)


def train_dn(model: DNNet, scenes: np.ndarray, sigma: float, cfg: TrainConfig, callback=None) -> History:
    return fit(model, scenes, cfg, make_dn_loss(sigma), callback)


# ------------------------------------------------------------------ evaluation

def reconstruct_stages(model: CRNet, lf: np.ndarray, cms: np.ndarray | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run a single light field ``(M, N, H, W)`` through the network without recording a graph.

    Returns the ``(S, H, W)`` measurements and the per-stage estimates.
    """
    with ad.no_grad():
        x = ad.Tensor(np.asarray(lf, model.dtype)[None])
        if cms is None:
            cms_t = model.simulate_cms(x)
        else:
            cms_t = ad.Tensor(np.asarray(cms, model.dtype).transpose(1, 2, 0)[None])
        outs = model.reconstruct(cms_t)
    return cms_t.data[0].transpose(2, 0, 1), [o.data[0] for o in outs]


def evaluate_cr(model: CRNet, scenes, names=None) -> list[dict]:
    """One row per scene and stage, plus a ``baseline`` row for the tiled mean measurement."""
    rows = []
    code = model.projection.code.data
    for i, lf in enumerate(scenes):
        name = names[i] if names else f"scene_{i:03d}"
        cms, outs = reconstruct_stages(model, lf)
        for t, est in enumerate(outs):
            est = np.clip(est, 0.0, 1.0)
            rows.append({"scene": name, "psnr": psnr(est, lf), "ssim": ssim(est, lf), "stage": t})
        base = np.clip(tile_mean_baseline(cms, code, model.m, model.n), 0.0, 1.0)
        rows.append({"scene": name, "psnr": psnr(base, lf), "ssim": ssim(base, lf), "stage": "baseline"})
    return rows


def denoise(model: DNNet, noisy: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return model(ad.Tensor(np.asarray(noisy, model.dtype)[None])).data[0]


def evaluate_dn(model: DNNet, scenes, sigma: float, seed: int = 0, names=None) -> list[dict]:
    """Rows for the network (``method=pfe``) and the ``identity`` / ``angular_mean`` baselines."""
    rows = []
    for i, lf in enumerate(scenes):
        name = names[i] if names else f"scene_{i:03d}"
        noisy = add_noise(lf, NoiseSpec(sigma, seed + i)).data
        out = denoise(model, noisy)
        avg = np.broadcast_to(angular_average(noisy), lf.shape)
        for method, est in (("pfe", out), ("identity", noisy), ("angular_mean", avg)):
            est = np.clip(est, 0.0, 1.0)
            per_view = psnr_per_view(est, lf)
            row = {"scene": name, "sigma": sigma, "method": method,
                   "psnr": float(per_view.mean()), "ssim": ssim(est, lf)}
            m, n = lf.shape[:2]
            for k, value in enumerate(per_view):
                row[f"psnr_v{k // n}_{k % n}"] = float(value)
            rows.append(row)
    return rows
