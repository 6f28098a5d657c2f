"""Probabilistic feature embedding (PFE) for light-field feature maps.

Feature maps are channel-last ``(B, M, N, H, W, C)`` tensors. A PFE module
embeds its input with one linear 3x3 spatial conv (``H0``), then runs ``J``
units. Unit ``j`` first aggregates the gated features ``H0..H(j-1)`` with a
1x1 conv and ReLU, then applies four gated 3x3 pattern convs (spatial,
angular, horizontal EPI, vertical EPI). Their outputs are fused by a 1x1
conv and ReLU and passed through a spatial 3x3 conv. A linear 1x1 head maps
``HJ`` to one value per view.

Every 1x1 conv over a channel concatenation is stored as one ``C x C``
block per source and evaluated as an ordered sum of per-block products.
A gate that is exactly zero then contributes exact zeros, so a physically
pruned module reproduces the hard-masked template bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Conv, Module, ModuleList, Parameter, Tensor

PATTERNS = ("spa", "ang", "epih", "epiv")

# plane axes of each pattern in a (B, M, N, H, W, C) tensor
PLANE_AXES = {
    "spa": (3, 4),   # (x, y)
    "ang": (1, 2),   # (u, v)
    "epih": (2, 4),  # (v, y) at fixed (u, x)
    "epiv": (1, 3),  # (u, x) at fixed (v, y)
}

P_EPS = 1e-4

# the linear head starts at a tenth of the usual init scale
HEAD_INIT_SCALE = 0.1


# ------------------------------------------------------------------ folding

def _fold_order(pattern: str) -> tuple[int, ...]:
    a1, a2 = PLANE_AXES[pattern]
    batch = [a for a in range(5) if a not in (a1, a2)]
    return tuple(batch) + (5, a1, a2)


def fold(x: np.ndarray, pattern: str) -> np.ndarray:
    """Rearrange ``(B, M, N, H, W, C)`` into an NCHW stack of 2-D planes for ``pattern``."""
    order = _fold_order(pattern)
    y = np.ascontiguousarray(x.transpose(order))
    return y.reshape((-1,) + y.shape[3:])


def unfold(y: np.ndarray, pattern: str, shape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`fold` for a target ``(B, M, N, H, W, C')`` shape."""
    order = _fold_order(pattern)
    c = y.shape[1]
    permuted = tuple(shape[a] if a != 5 else c for a in order)
    return np.ascontiguousarray(y.reshape(permuted).transpose(np.argsort(order)))


# ---------------------------------------------------------------- gumbel gates

def gumbel_noise(r: np.ndarray) -> np.ndarray:
    return -np.log(-np.log(r))


def gumbel_mask(p, tau: float, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """Relaxed Bernoulli sample ``sigmoid((logit(p) + g1 - g2) / tau)``.

    ``p`` is clamped to ``[1e-4, 1 - 1e-4]``; ``g = -log(-log r)`` with
    ``r ~ U(0, 1)``. Pass ``noise=(r1, r2)`` to fix the uniform draws. As
    ``tau -> 0`` the sample approaches ``Bernoulli(p)``.
    """
    p = ad.tensor(p)
    if noise is None:
        r = rng.random((2,) + p.shape)
        r = np.clip(r, np.finfo(np.float64).tiny, 1.0 - 1e-16)
        r1, r2 = r[0], r[1]
    else:
        r1, r2 = (np.asarray(a, dtype=np.float64) for a in noise)
    g = (gumbel_noise(r1) - gumbel_noise(r2)).astype(p.dtype)
    pc = ad.clamp(p, P_EPS, 1.0 - P_EPS)
    logit = ad.sub(ad.log(pc), ad.log(ad.sub(1.0, pc)))
    return ad.sigmoid(ad.scalar_mul(ad.add(logit, g), 1.0 / tau))


def set_temperature(epoch: float, total_epochs: float, start: float = 1.0, end: float = 0.05,
                    fraction: float = 0.4) -> float:
    """Linear anneal from ``start`` to ``end`` over the first ``fraction`` of epochs, then constant."""
    if total_epochs <= 0:
        return end
    span = fraction * total_epochs
    if span <= 0 or epoch >= span:
        return end
    return start + (end - start) * max(epoch, 0) / span


class GateBank(Module):
    """Learnable keep-probabilities for aggregation paths (``u``) and conv patterns (``v``).

    Unit ``j`` (1-based) owns ``u{j}`` of length ``j``, gating ``H0..H(j-1)``,
    and ``v{j}`` of length 4 over :data:`PATTERNS`. ``mode`` is one of
    ``template`` (all masks 1), ``sampled`` (Gumbel relaxation) or ``hard``
    (thresholded probabilities).
    """

    MODES = ("template", "sampled", "hard")

    def __init__(self, units: int, rng=None, dtype=np.float32, init=(0.3, 0.7)):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.units = units
        for j in range(1, units + 1):
            setattr(self, f"u{j}", Parameter(rng.uniform(*init, size=j).astype(dtype)))
            setattr(self, f"v{j}", Parameter(rng.uniform(*init, size=4).astype(dtype)))
        object.__setattr__(self, "mode", "template")
        object.__setattr__(self, "threshold", 0.5)

    def set_mode(self, mode: str) -> None:
        if mode not in self.MODES:
            raise ValueError(f"unknown gate mode {mode!r}")
        object.__setattr__(self, "mode", mode)

    def u(self, j: int) -> Parameter:
        return getattr(self, f"u{j}")

    def v(self, j: int) -> Parameter:
        return getattr(self, f"v{j}")

    def fill(self, value: float) -> None:
        for p in self.parameters():
            p.data[...] = value

    def clip(self) -> None:
        ad.clip_params(self.parameters(), 0.0, 1.0)

    def masks(self, j: int, tau: float, rng) -> tuple[Tensor | None, Tensor | None]:
        """Masks for unit ``j``; ``None`` means "all ones, leave features untouched"."""
        if self.mode == "template":
            return None, None
        u, v = self.u(j), self.v(j)
        if self.mode == "hard":
            hu = (np.clip(u.data, 0, 1) >= self.threshold).astype(u.dtype)
            hv = (np.clip(v.data, 0, 1) >= self.threshold).astype(v.dtype)
            return Tensor(hu), Tensor(hv)
        # one draw per gate per forward pass, u before v
        return gumbel_mask(u, tau, rng), gumbel_mask(v, tau, rng)


# ------------------------------------------------------------ architecture

@dataclass
class ArchitectureMask:
    """Binary MAP architecture derived from gate probabilities.

    ``u[j-1][k]`` / ``v[j-1][l]`` are the raw thresholded gates. ``live``,
    ``sources`` and ``patterns`` describe the pruned network after removing
    every unit whose output is identically zero or never consumed.
    """

    u: list[list[int]]
    v: list[list[int]]
    threshold: float = 0.5
    live: list[bool] = field(default_factory=list)
    sources: list[list[int]] = field(default_factory=list)
    patterns: list[list[str]] = field(default_factory=list)
    u_probs: list[list[float]] | None = None
    v_probs: list[list[float]] | None = None

    def __post_init__(self):
        if not self.live:
            self._resolve()

    @property
    def units(self) -> int:
        return len(self.u)

    def _resolve(self) -> None:
        J = self.units
        nonzero = [True] + [False] * J
        for j in range(1, J + 1):
            fed = any(self.u[j - 1][k] and nonzero[k] for k in range(j))
            nonzero[j] = fed and any(self.v[j - 1])
        used = [False] * (J + 1)
        used[J] = True
        live = [False] * (J + 1)
        live[0] = True
        for j in range(J, 0, -1):
            live[j] = nonzero[j] and used[j]
            if live[j]:
                for k in range(j):
                    if self.u[j - 1][k] and nonzero[k]:
                        used[k] = True
        self.live = live[1:]
        self.sources = [
            [k for k in range(j) if self.live[j - 1] and self.u[j - 1][k] and nonzero[k]]
            for j in range(1, J + 1)
        ]
        self.patterns = [
            [p for p, keep in zip(PATTERNS, self.v[j - 1]) if keep and self.live[j - 1]]
            for j in range(1, J + 1)
        ]

    @property
    def input_used(self) -> bool:
        return any(0 in s for s in self.sources)

    def is_template(self) -> bool:
        return all(all(r) for r in self.u) and all(all(r) for r in self.v)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "u": self.u,
            "v": self.v,
            "u_probs": self.u_probs,
            "v_probs": self.v_probs,
            "units": [
                {"unit": j + 1, "live": self.live[j], "patterns": self.patterns[j], "sources": self.sources[j]}
                for j in range(self.units)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureMask":
        return cls(u=d["u"], v=d["v"], threshold=d.get("threshold", 0.5),
                   u_probs=d.get("u_probs"), v_probs=d.get("v_probs"))

    @classmethod
    def template(cls, units: int) -> "ArchitectureMask":
        return cls(u=[[1] * j for j in range(1, units + 1)], v=[[1] * 4 for _ in range(units)])


def derive_map_architecture(gates: GateBank, threshold: float = 0.5) -> ArchitectureMask:
    """Keep every path/pattern whose clamped probability is at least ``threshold``."""
    u, v, up, vp = [], [], [], []
    for j in range(1, gates.units + 1):
        pu = np.clip(gates.u(j).data.astype(np.float64), 0.0, 1.0)
        pv = np.clip(gates.v(j).data.astype(np.float64), 0.0, 1.0)
        u.append([int(x >= threshold) for x in pu])
        v.append([int(x >= threshold) for x in pv])
        up.append([round(float(x), 6) for x in pu])
        vp.append([round(float(x), 6) for x in pv])
    return ArchitectureMask(u=u, v=v, threshold=threshold, u_probs=up, v_probs=vp)


def architecture_report(arch: ArchitectureMask, stage: int | None = None) -> str:
    lines = []
    head = f"stage {stage}" if stage is not None else "module"
    lines.append(f"{head}: threshold {arch.threshold}")
    for j in range(arch.units):
        if not arch.live[j]:
            lines.append(f"  unit {j + 1}: pruned")
            continue
        pats = ",".join(arch.patterns[j]) or "-"
        srcs = ",".join(f"H{k}" for k in arch.sources[j]) or "-"
        lines.append(f"  unit {j + 1}: patterns [{pats}]  sources [{srcs}]")
    return "\n".join(lines)


# ------------------------------------------------------------------ modules

class Aggregator(Module):
    """1x1 compression of the gated features ``H0..H(j-1)`` followed by ReLU."""

    def __init__(self, unit: int, sources: list[int], channels: int, rng, dtype):
        super().__init__()
        object.__setattr__(self, "sources", list(sources))
        # blocks are drawn for every template source so pruning keeps the same values
        for k in range(unit):
            conv = Conv(channels, channels, 1, rng, dtype=dtype, fan_in=unit * channels)
            if k in sources:
                setattr(self, f"src{k}", conv)

    def __call__(self, feats: list[Tensor | None], mask: Tensor | None) -> Tensor:
        acc = None
        for k in self.sources:
            t = feats[k]
            if mask is not None:
                t = ad.mul(t, mask[k])
            y = getattr(self, f"src{k}")(t)
            acc = y if acc is None else ad.add(acc, y)
        return ad.relu(acc)


class FeatureEmbeddingUnit(Module):
    """Gated spatial/angular/EPI 3x3 convs, 1x1 fuse + ReLU, then a spatial 3x3 conv."""

    def __init__(self, channels: int, rng, dtype, patterns=PATTERNS, live: bool = True):
        super().__init__()
        object.__setattr__(self, "patterns", tuple(patterns))
        for p in PATTERNS:
            conv = Conv(channels, channels, 3, rng, dtype=dtype)
            if p in patterns:
                setattr(self, p, conv)
        for p in PATTERNS:
            conv = Conv(channels, channels, 1, rng, dtype=dtype, fan_in=len(PATTERNS) * channels)
            if p in patterns:
                setattr(self, f"fuse_{p}", conv)
        post = Conv(channels, channels, 3, rng, dtype=dtype)
        if live:
            self.post = post

    def __call__(self, h: Tensor, mask: Tensor | None) -> Tensor:
        acc = None
        for p in self.patterns:
            o = getattr(self, p)(h, PLANE_AXES[p])
            if mask is not None:
                o = ad.mul(o, mask[PATTERNS.index(p)])
            y = getattr(self, f"fuse_{p}")(o)
            acc = y if acc is None else ad.add(acc, y)
        if acc is None:
            acc = Tensor(np.zeros(h.shape, h.dtype))
        return self.post(ad.relu(acc), PLANE_AXES["spa"])


class PFEModule(Module):
    """One PFE stage mapping ``(B, M, N, H, W, in_ch)`` features to ``(B, M, N, H, W)``.

    With ``arch=None`` the full template is built together with a
    :class:`GateBank`. With an :class:`ArchitectureMask` only the live
    units, paths and patterns get parameters and no gates are applied.
    """

    def __init__(self, in_ch: int, channels: int, units: int, rng=None, dtype=np.float32,
                 arch: ArchitectureMask | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if units < 1:
            raise ValueError("a PFE module needs at least one unit")
        self.in_ch, self.channels, self.units = in_ch, channels, units
        object.__setattr__(self, "arch", arch)
        template = ArchitectureMask.template(units) if arch is None else arch
        if arch is not None and arch.units != units:
            raise ValueError(f"architecture has {arch.units} units, module {units}")
        object.__setattr__(self, "_layout", template)

        self.input_embed = Conv(in_ch, channels, 3, rng, dtype=dtype)
        self.aggregators = ModuleList()
        self.blocks = ModuleList()
        for j in range(units):
            self.aggregators.append(Aggregator(j + 1, template.sources[j], channels, rng, dtype))
            self.blocks.append(FeatureEmbeddingUnit(channels, rng, dtype, template.patterns[j], template.live[j]))
        head = Conv(channels, 1, 1, rng, dtype=dtype)
        # small head so stacked residual stages start near their input
        head.weight.data *= np.asarray(HEAD_INIT_SCALE, dtype)
        if template.live[-1]:
            self.head = head
        else:
            # the module output is identically zero and embeds nothing
            del self._children["input_embed"]
            object.__setattr__(self, "input_embed", None)
        if arch is None:
            self.gates = GateBank(units, rng, dtype)
        else:
            object.__setattr__(self, "gates", None)

    @property
    def pruned(self) -> bool:
        return self.arch is not None

    def weight_parameters(self) -> list[Parameter]:
        gate_ids = {id(p) for p in self.gates.parameters()} if self.gates is not None else set()
        return [p for p in self.parameters() if id(p) not in gate_ids]

    def num_weights(self) -> int:
        return int(sum(p.size for p in self.weight_parameters()))

    def aggregate(self, j: int, feats: list[Tensor | None], tau: float, rng) -> Tensor:
        umask, _ = self._masks(j, tau, rng, which="u")
        return self.aggregators[j - 1](feats, umask)

    def embed_unit(self, j: int, h: Tensor, tau: float, rng) -> Tensor:
        _, vmask = self._masks(j, tau, rng, which="v")
        return self.blocks[j - 1](h, vmask)

    def _masks(self, j, tau, rng, which):
        if self.gates is None or self.gates.mode == "template":
            return None, None
        g = self.gates
        if g.mode == "hard":
            return g.masks(j, tau, rng)
        p = g.u(j) if which == "u" else g.v(j)
        m = gumbel_mask(p, tau, rng)
        return (m, None) if which == "u" else (None, m)

    def __call__(self, x, tau: float = 1.0, rng=None) -> Tensor:
        layout = self._layout
        if not layout.live[-1]:
            return Tensor(np.zeros(x.shape[:-1], dtype=self.dtype))
        feats: list[Tensor | None] = [self.input_embed(x, PLANE_AXES["spa"])]
        for j in range(1, self.units + 1):
            if not layout.live[j - 1]:
                feats.append(None)
                continue
            h = self.aggregate(j, feats, tau, rng)
            feats.append(self.embed_unit(j, h, tau, rng))
        y = self.head(feats[-1])
        return ad.reshape(y, y.shape[:-1])

    def derive(self, threshold: float = 0.5) -> ArchitectureMask:
        return derive_map_architecture(self.gates, threshold)

    def prune(self, arch: ArchitectureMask | None = None) -> "PFEModule":
        """Physically pruned copy holding only the live parameters of ``arch``."""
        if self.pruned:
            raise ValueError("module is already pruned")
        arch = arch or self.derive()
        out = PFEModule(self.in_ch, self.channels, self.units, dtype=self.dtype, arch=arch)
        own = dict(self.named_parameters())
        out.load_state_dict({k: own[k].data for k, _ in out.named_parameters()})
        return out


def arch_to_json(arches: list[ArchitectureMask]) -> str:
    return json.dumps([a.to_dict() for a in arches], indent=2)
