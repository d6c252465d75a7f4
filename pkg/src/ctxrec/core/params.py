"""Named parameter tensors with gradient buffers and Adam state.

A :class:`ParameterStore` maps dotted names (``m1.pool2.W``,
``m2.<domain>.users`` ...) to :class:`Parameter` entries. The dotted prefix
is the unit of transfer: shared-module prefixes move between domains,
embedding prefixes never do.

A store is exclusive-write during a training step; read-only evaluation
over a frozen store may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .autodiff import Tensor, default_dtype
from .backend import kernels


@dataclass
class Parameter:
    """One named tensor with its gradient and Adam moment buffers."""

    name: str
    tensor: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    trainable: bool = True

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass
class AdamConfig:
    """Adam hyperparameters; defaults are the optimizer's canonical settings."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("lr and eps must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1/beta2 must lie in (0,1)")
        if self.step_count < 0:
            raise ConfigError("step_count must be non-negative")


class ParameterStore:
    """Ordered mapping name -> Parameter with prefix queries."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, values, trainable: bool = True) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        # np.array rather than ascontiguousarray: 0-d (scalar) shapes survive
        arr = np.array(values, dtype=default_dtype(), order="C")
        p = Parameter(
            name=name,
            tensor=arr,
            grad=np.zeros_like(arr),
            adam_m=np.zeros_like(arr),
            adam_v=np.zeros_like(arr),
            trainable=trainable,
        )
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params.values())

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def leaf(self, name: str) -> Tensor:
        """A fresh graph leaf bound to this parameter's value and grad buffers.

        Fetching the same parameter twice in one forward yields two leaves
        that accumulate into the same grad buffer, so repeated use sums.
        """
        p = self._params[name]
        t = Tensor.__new__(Tensor)
        t.data = p.tensor
        t.grad = p.grad
        t.requires_grad = p.trainable
        t._parents = ()
        t._backward_fn = None
        t._done = False
        return t

    def zero_grads(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self._params[n].zero_grad()

    def set_trainable(self, prefix: str, flag: bool) -> None:
        for n in self.names(prefix):
            self._params[n].trainable = flag

    def copy_values_from(self, other: "ParameterStore", prefix: str = "") -> list[str]:
        """Copy matching-name values under `prefix`; returns the copied names."""
        copied = []
        for n in other.names(prefix):
            if n in self._params:
                src, dst = other[n].tensor, self._params[n].tensor
                if src.shape != dst.shape:
                    raise ShapeError(f"parameter {n!r}: shape {src.shape} != {dst.shape}")
                np.copyto(dst, src.astype(dst.dtype, copy=False))
                copied.append(n)
        return copied

    def snapshot(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: self._params[n].tensor.copy() for n in self.names(prefix)}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for n, arr in snap.items():
            np.copyto(self._params[n].tensor, arr)


def adam_step(store: ParameterStore, cfg: AdamConfig, lr_override=None, lr_for=None) -> None:
    """Apply one bias-corrected Adam update to every trainable parameter.

    `lr_override` replaces cfg.lr for this call only. `lr_for(name)` may
    supply a per-parameter rate instead (annealed transfer uses this); a
    None return skips that parameter entirely, leaving its gradient intact.
    Gradients of stepped parameters are zeroed afterwards.
    """
    cfg.step_count += 1
    t = float(cfg.step_count)
    base_lr = cfg.lr if lr_override is None else float(lr_override)
    for p in store:
        if not p.trainable:
            continue
        lr = base_lr if lr_for is None else lr_for(p.name)
        if lr is None:
            continue
        kernels.adam_update(
            p.tensor, p.grad, p.adam_m, p.adam_v, t, float(lr), cfg.beta1, cfg.beta2, cfg.eps
        )
        p.zero_grad()
