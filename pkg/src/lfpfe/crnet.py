"""Cycle-consistent coded-aperture reconstruction network.

A learnable projection layer simulates ``S`` coded measurements from a
light field. Stage 0 estimates the light field from the measurements, and
each later stage adds a correction predicted from the measurement residual
``I - P(L)``. All stages read the same projection weights.

Batched light fields are ``(B, M, N, H, W)`` tensors; coded measurements
are channel-last ``(B, H, W, S)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Module, ModuleList, Parameter, Tensor
from .pfe import ArchitectureMask, PFEModule


class ProjectionLayer(Module):
    """Learnable aperture code ``a_i(u, v)`` of shape ``(S, M, N)``, kept in [0, 1]."""

    def __init__(self, s: int, m: int, n: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.s, self.m, self.n = s, m, n
        self.code = Parameter(rng.uniform(0.0, 1.0, size=(s, m, n)).astype(dtype))

    def __call__(self, lf) -> Tensor:
        lf = ad.tensor(lf)
        if lf.ndim != 5 or lf.shape[1:3] != (self.m, self.n):
            raise ValueError(f"light field batch {lf.shape} does not match angular dims {(self.m, self.n)}")
        B, M, N, H, W = lf.shape
        views = ad.reshape(ad.permute(lf, (0, 3, 4, 1, 2)), (B, H, W, M * N))
        code = ad.permute(ad.reshape(self.code, (self.s, M * N)), (1, 0))
        return ad.linear(views, code)

    def set_code(self, weights) -> None:
        w = np.asarray(weights, dtype=self.code.dtype)
        if w.shape != self.code.shape:
            raise ValueError(f"code shape {w.shape} != {self.code.shape}")
        self.code.data = w.copy()

    def clip(self) -> None:
        ad.clip_params([self.code], 0.0, 1.0)


class CRNet(Module):
    def __init__(self, m: int, n: int, s: int, stages: int = 6, units: int = 8, channels: int = 32,
                 rng=None, dtype=np.float32, normalize_cms: bool = False,
                 arches: list[ArchitectureMask] | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if stages < 1:
            raise ValueError("CR-Net needs at least one stage")
        self.m, self.n, self.s = m, n, s
        self.num_stages, self.units, self.channels = stages, units, channels
        self.normalize_cms = normalize_cms
        self.freeze_code = False
        self.projection = ProjectionLayer(s, m, n, rng, dtype)
        self.stages = ModuleList(
            PFEModule(s, channels, units, rng, dtype, arch=None if arches is None else arches[t])
            for t in range(stages)
        )

    def config(self) -> dict:
        return {"kind": "cr", "m": self.m, "n": self.n, "s": self.s, "stages": self.num_stages,
                "units": self.units, "channels": self.channels, "normalize_cms": self.normalize_cms}

    def gate_banks(self):
        return [st.gates for st in self.stages if st.gates is not None]

    def set_gate_mode(self, mode: str) -> None:
        for g in self.gate_banks():
            g.set_mode(mode)

    def weight_parameters(self) -> list[Parameter]:
        """Trainable non-gate parameters; the code is left out while ``freeze_code`` is set."""
        code = [] if self.freeze_code else [self.projection.code]
        return code + [p for st in self.stages for p in st.weight_parameters()]

    def num_weights(self) -> int:
        return int(self.projection.code.size + sum(st.num_weights() for st in self.stages))

    def clip(self) -> None:
        self.projection.clip()
        for g in self.gate_banks():
            g.clip()

    def simulate_cms(self, lf) -> Tensor:
        return self.projection(lf)

    def lift(self, cms: Tensor) -> Tensor:
        """Tile the ``(B, H, W, S)`` measurements to every view: ``(B, M, N, H, W, S)``."""
        if cms.shape[-1] != self.s:
            raise ValueError(f"expected {self.s} measurement channels, got {cms.shape[-1]}")
        if self.normalize_cms:
            cms = ad.scalar_mul(cms, 1.0 / (self.m * self.n))
        B, H, W, S = cms.shape
        return ad.broadcast_to(ad.reshape(cms, (B, 1, 1, H, W, S)), (B, self.m, self.n, H, W, S))

    def coarse_estimate(self, cms, tau: float = 1.0, rng=None) -> Tensor:
        return self.stages[0](self.lift(ad.tensor(cms)), tau, rng)

    def refine(self, t: int, lf: Tensor, cms, tau: float = 1.0, rng=None) -> Tensor:
        """Stage ``t >= 1``: ``L + D_t(lift(I - P(L)))``."""
        residual = ad.sub(ad.tensor(cms), self.simulate_cms(lf))
        return ad.add(self.stages[t](self.lift(residual), tau, rng), lf)

    def reconstruct(self, cms, tau: float = 1.0, rng=None) -> list[Tensor]:
        """Per-stage estimates from given measurements; the last entry is the final output."""
        outs = [self.coarse_estimate(cms, tau, rng)]
        for t in range(1, self.num_stages):
            outs.append(self.refine(t, outs[-1], cms, tau, rng))
        return outs

    def __call__(self, lf, tau: float = 1.0, rng=None) -> tuple[Tensor, list[Tensor]]:
        cms = self.simulate_cms(lf)
        return cms, self.reconstruct(cms, tau, rng)

    def architectures(self, threshold: float = 0.5) -> list[ArchitectureMask]:
        return [st.derive(threshold) for st in self.stages]

    def prune(self, threshold: float = 0.5) -> "CRNet":
        arches = self.architectures(threshold)
        out = CRNet(self.m, self.n, self.s, self.num_stages, self.units, self.channels,
                    dtype=self.dtype, normalize_cms=self.normalize_cms, arches=arches)
        own = dict(self.named_parameters())
        out.load_state_dict({k: own[k].data for k, _ in out.named_parameters()})
        return out


def tile_mean_baseline(cms: np.ndarray, code: np.ndarray, m: int, n: int) -> np.ndarray:
    """Every view set to the summed measurements divided by the summed transmittance.

    ``cms`` is ``(S, H, W)``, ``code`` is ``(S, M, N)``; returns ``(M, N, H, W)``.
    """
    total = float(np.asarray(code, np.float64).sum())
    est = np.asarray(cms, np.float64).sum(axis=0) / max(total, 1e-12)
    return np.broadcast_to(est, (m, n) + est.shape).astype(np.float32)
