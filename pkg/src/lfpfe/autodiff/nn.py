"""Parameter containers and layers on top of the tensor ops."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import engine as T
from .engine import Tensor


class Parameter(Tensor):
    """A leaf tensor that an optimizer updates."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


class Module:
    """Minimal module tree: parameters and submodules are registered on assignment."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            self._params[key] = value
            self._children.pop(key, None)
        elif isinstance(value, Module):
            self._children[key] = value
            self._params.pop(key, None)
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, value in state.items():
            if name not in own:
                continue
            p = own[name]
            if tuple(value.shape) != p.shape:
                raise ValueError(f"{name}: shape {tuple(value.shape)} != {p.shape}")
            p.data = np.array(value, dtype=p.dtype)

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        ps = self.parameters()
        return ps[0].dtype if ps else np.dtype(np.float32)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        object.__setattr__(self, "_items", [])
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv(Module):
    """Stride-1 "same" convolution with kernel ``(out, in, k, k)``, bias-free by default.

    Applied to channel-last tensors over an arbitrary pair of axes, or to
    ``(B, C, H, W)`` input through :meth:`nchw`.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3, rng=None, bias: bool = False,
                 dtype=np.float32, fan_in: int | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = in_ch, out_ch, kernel
        fan_in = fan_in or in_ch * kernel * kernel
        self.weight = Parameter(he_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, dtype))
        if bias:
            self.bias = Parameter(np.zeros(out_ch, dtype=dtype))
        else:
            self.bias = None

    def __call__(self, x, axes: tuple[int, int] = (-3, -2)) -> Tensor:
        y = T.conv_plane(x, self.weight, axes)
        return y if self.bias is None else T.add(y, self.bias)

    def nchw(self, x) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


Conv2dLayer = Conv


class Linear(Module):
    """Bias-free ``(in, out)`` matrix applied to the last axis."""

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Parameter(he_uniform(rng, (in_features, out_features), in_features, dtype))

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.weight)
