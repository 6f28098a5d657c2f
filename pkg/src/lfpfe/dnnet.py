"""Iterative light-field denoising network.

Each stage builds an 8-channel guidance image from the noisy views (the
plain angular mean plus seven learnable view fusions), embeds it and gates
it with spatial attention. The gated guidance is concatenated to every
view's own features and reweighted by per-view channel attention, and a
PFE module maps the result to one value per view. Stage 0 predicts the
denoised light field directly; every later stage adds a residual.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Conv, Linear, Module, ModuleList, Parameter, Tensor
from .pfe import ArchitectureMask, PFEModule

SPATIAL = (-3, -2)


def view_mean(lf: Tensor) -> Tensor:
    """Mean over the angular axes of a ``(B, M, N, H, W)`` batch."""
    return ad.mean(lf, axis=(1, 2))


class NoiseSuppressor(Module):
    """Angular mean (fixed) concatenated with 7 learnable view fusions: ``(B, H, W, 8)``."""

    def __init__(self, views: int, adaptive: int = 7, dtype=np.float32):
        super().__init__()
        self.views = views
        self.fusion = Parameter(np.full((views, adaptive), 1.0 / views, dtype=dtype))

    def __call__(self, lf) -> Tensor:
        lf = ad.tensor(lf)
        B, M, N, H, W = lf.shape
        if M * N != self.views:
            raise ValueError(f"expected {self.views} views, got {M}x{N}")
        fixed = ad.reshape(view_mean(lf), (B, H, W, 1))
        stack = ad.reshape(ad.permute(lf, (0, 3, 4, 1, 2)), (B, H, W, M * N))
        return ad.concat([fixed, ad.linear(stack, self.fusion)], axis=-1)


class SpatialAttention(Module):
    """Channel mean/max pooling, 7x7 conv to one map, sigmoid, multiply."""

    def __init__(self, rng=None, dtype=np.float32, kernel: int = 7):
        super().__init__()
        self.conv = Conv(2, 1, kernel, rng, dtype=dtype)

    def attention_map(self, feat: Tensor) -> Tensor:
        pooled = ad.concat([ad.mean(feat, axis=-1, keepdims=True), ad.max(feat, axis=-1, keepdims=True)], axis=-1)
        return ad.sigmoid(self.conv(pooled, SPATIAL))

    def __call__(self, feat: Tensor) -> Tensor:
        return ad.mul(feat, self.attention_map(feat))


class ChannelAttention3D(Module):
    """Squeeze-excitation over ``[view feature | guidance]`` channels.

    ``layout="per_view"`` squeezes each view separately with shared weights;
    ``layout="joint"`` squeezes the whole view stack into one scale vector.
    """

    def __init__(self, channels: int, reduction: int = 4, rng=None, dtype=np.float32, layout: str = "per_view"):
        super().__init__()
        if layout not in ("per_view", "joint"):
            raise ValueError(f"unknown channel-attention layout {layout!r}")
        object.__setattr__(self, "layout", layout)
        hidden = max(channels // reduction, 1)
        self.excite = Linear(channels, hidden, rng, dtype)
        self.restore = Linear(hidden, channels, rng, dtype)

    def combine(self, per_view: Tensor, guidance: Tensor) -> Tensor:
        B, M, N, H, W, C = per_view.shape
        if guidance.shape != (B, H, W, guidance.shape[-1]):
            raise ValueError(f"guidance {guidance.shape} does not match views {per_view.shape}")
        g = ad.broadcast_to(ad.reshape(guidance, (B, 1, 1, H, W, guidance.shape[-1])),
                            (B, M, N, H, W, guidance.shape[-1]))
        return ad.concat([per_view, g], axis=-1)

    def scales(self, combined: Tensor) -> Tensor:
        axes = (3, 4) if self.layout == "per_view" else (1, 2, 3, 4)
        squeezed = ad.mean(combined, axis=axes, keepdims=True)
        return ad.sigmoid(self.restore(ad.relu(self.excite(squeezed))))

    def __call__(self, per_view: Tensor, guidance: Tensor) -> Tensor:
        combined = self.combine(per_view, guidance)
        return ad.mul(combined, self.scales(combined))


class DNStage(Module):
    def __init__(self, m: int, n: int, channels: int, units: int, rng=None, dtype=np.float32,
                 ca_layout: str = "per_view", arch: ArchitectureMask | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sai_conv = Conv(1, channels, 3, rng, dtype=dtype)
        self.suppress = NoiseSuppressor(m * n, dtype=dtype)
        self.guide_conv = Conv(8, channels, 3, rng, dtype=dtype)
        self.spatial_attention = SpatialAttention(rng, dtype)
        self.channel_attention = ChannelAttention3D(2 * channels, 4, rng, dtype, ca_layout)
        self.pfe = PFEModule(2 * channels, channels, units, rng, dtype, arch=arch)

    def features(self, lf: Tensor) -> Tensor:
        guidance = self.spatial_attention(self.guide_conv(self.suppress(lf), SPATIAL))
        per_view = self.sai_conv(ad.reshape(lf, lf.shape + (1,)), SPATIAL)
        return self.channel_attention(per_view, guidance)

    def __call__(self, lf, tau: float = 1.0, rng=None) -> Tensor:
        return self.pfe(self.features(ad.tensor(lf)), tau, rng)


class DNNet(Module):
    def __init__(self, m: int, n: int, stages: int = 2, units: int = 6, channels: int = 64,
                 rng=None, dtype=np.float32, ca_layout: str = "per_view",
                 arches: list[ArchitectureMask] | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if stages < 1:
            raise ValueError("DN-Net needs at least one stage")
        self.m, self.n = m, n
        self.num_stages, self.units, self.channels = stages, units, channels
        object.__setattr__(self, "ca_layout", ca_layout)
        self.stages = ModuleList(
            DNStage(m, n, channels, units, rng, dtype, ca_layout, None if arches is None else arches[t])
            for t in range(stages)
        )

    def config(self) -> dict:
        return {"kind": "dn", "m": self.m, "n": self.n, "stages": self.num_stages, "units": self.units,
                "channels": self.channels, "ca_layout": self.ca_layout}

    def gate_banks(self):
        return [st.pfe.gates for st in self.stages if st.pfe.gates is not None]

    def set_gate_mode(self, mode: str) -> None:
        for g in self.gate_banks():
            g.set_mode(mode)

    def weight_parameters(self) -> list[Parameter]:
        gate_ids = {id(p) for g in self.gate_banks() for p in g.parameters()}
        return [p for p in self.parameters() if id(p) not in gate_ids]

    def num_weights(self) -> int:
        return int(sum(p.size for p in self.weight_parameters()))

    def clip(self) -> None:
        for g in self.gate_banks():
            g.clip()

    def stage_outputs(self, lf, tau: float = 1.0, rng=None) -> list[Tensor]:
        outs = [self.stages[0](lf, tau, rng)]
        for t in range(1, self.num_stages):
            outs.append(ad.add(self.stages[t](outs[-1], tau, rng), outs[-1]))
        return outs

    def __call__(self, lf, tau: float = 1.0, rng=None) -> Tensor:
        return self.stage_outputs(lf, tau, rng)[-1]

    def architectures(self, threshold: float = 0.5) -> list[ArchitectureMask]:
        return [st.pfe.derive(threshold) for st in self.stages]

    def prune(self, threshold: float = 0.5) -> "DNNet":
        arches = self.architectures(threshold)
        out = DNNet(self.m, self.n, self.num_stages, self.units, self.channels, dtype=self.dtype,
                    ca_layout=self.ca_layout, arches=arches)
        own = dict(self.named_parameters())
        out.load_state_dict({k: own[k].data for k, _ in out.named_parameters()})
        return out
