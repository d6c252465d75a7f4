"""Low-rank multiplicative context pooling with optional cross-segment residuals.

Level 1 is the raw context vector c. Each pooling layer lifts level n-1 to
level n by gating a weighted linear transform and multiplying elementwise
with c, so level n encodes up to n-variate products of context features in
a width-|C| vector:

    c^n = act(W^n c^{n-1} + b^n * c^{n-1}) * c

The gate activation is sigmoid; an identity mode exists only so algebraic
tests can verify the multiplicative degree structure exactly.

The cross-segment residual (enabled by `multimodal`) adds, per segment X,
    delta_X = s_X * tanh(W_{X<-Y} c_Y + W_{X<-Z} c_Z + b_X)
computed on the raw context before any pooling so the correction cascades
through every layer.

An additive ablation tower with the same parameter budget (plain
relu(Wx+b) layers, no multiplication by c) replaces the pooling stack when
`additive_context` is set.
"""

from __future__ import annotations

import numpy as np

from ..core import ACTIVATIONS, Tensor, add, concat, linear, mul, relu, slice_cols, tanh
from ..errors import ConfigError

_SEGS = ("I", "H", "A")


def pool_layer(c_prev, c_base, W, b, activation: str = "sigmoid") -> Tensor:
    """One multiplicative pooling layer: act(W c_prev + b*c_prev) * c_base."""
    pre = add(linear(c_prev, W), mul(b, c_prev))
    return mul(ACTIVATIONS[activation](pre), c_base)


def multimodal_residual(c, seg_params: dict, i_end: int, h_end: int) -> Tensor:
    """Add cross-segment information-gain corrections to a raw context batch.

    seg_params maps each segment tag to (s, W_from_first, W_from_second, b)
    where the two W matrices consume the other two segments in (I, H, A)
    order. Zero scaling vectors make this an exact identity.
    """
    bounds = {"I": (0, i_end), "H": (i_end, h_end), "A": (h_end, None)}
    pieces = {tag: slice_cols(c, lo, hi) for tag, (lo, hi) in bounds.items()}
    deltas = []
    for tag in _SEGS:
        others = [t for t in _SEGS if t != tag]
        s, w_first, w_second, b = seg_params[tag]
        gain = tanh(
            add(
                add(linear(pieces[others[0]], w_first), linear(pieces[others[1]], w_second)),
                b,
            )
        )
        deltas.append(mul(s, gain))
    return add(c, concat(deltas, axis=-1))


class ContextModule:
    """Parameter owner and forward pass for the context tower.

    Registers its parameters under the "m1." prefix:
      m1.pool{i}.W / m1.pool{i}.b      pooling layers, i = 2..n_layers
      m1.ff{i}.W / m1.ff{i}.b          additive ablation layers instead
      m1.xmod.*                        cross-segment residual (multimodal)
    """

    def __init__(self, store, cfg, rng):
        self.store = store
        self.cfg = cfg
        n = cfg.n_features
        if cfg.n_context_layers < 2:
            raise ConfigError("context tower needs n_context_layers >= 2")
        if cfg.activation not in ("sigmoid", "identity"):
            raise ConfigError(f"unsupported pooling activation {cfg.activation!r}")
        scale = 1.0 / np.sqrt(n)
        kind = "ff" if cfg.additive_context else "pool"
        for i in range(2, cfg.n_context_layers + 1):
            store.add(f"m1.{kind}{i}.W", rng.uniform(-scale, scale, size=(n, n)))
            store.add(f"m1.{kind}{i}.b", np.zeros(n))
        if cfg.multimodal:
            seg_len = {
                "I": cfg.i_end,
                "H": cfg.h_end - cfg.i_end,
                "A": n - cfg.h_end,
            }
            if min(seg_len.values()) == 0:
                raise ConfigError("multimodal residuals require non-empty I/H/A segments")
            for tag in _SEGS:
                others = [t for t in _SEGS if t != tag]
                store.add(f"m1.xmod.s_{tag}", np.zeros(seg_len[tag]))
                store.add(f"m1.xmod.b_{tag}", np.zeros(seg_len[tag]))
                for src in others:
                    s = 1.0 / np.sqrt(seg_len[src])
                    store.add(
                        f"m1.xmod.W_{tag}{src}",
                        rng.uniform(-s, s, size=(seg_len[tag], seg_len[src])),
                    )

    def _xmod_params(self):
        out = {}
        for tag in _SEGS:
            others = [t for t in _SEGS if t != tag]
            out[tag] = (
                self.store.leaf(f"m1.xmod.s_{tag}"),
                self.store.leaf(f"m1.xmod.W_{tag}{others[0]}"),
                self.store.leaf(f"m1.xmod.W_{tag}{others[1]}"),
                self.store.leaf(f"m1.xmod.b_{tag}"),
            )
        return out

    def forward(self, c: Tensor, first_layer_hook=None) -> tuple[Tensor, Tensor]:
        """(pooled, first_level) for a (B,|C|) or (|C|,) context tensor.

        `first_layer_hook`, when given, transforms the first computed level
        before deeper layers consume it (the residual-adapter insertion
        point); the returned first_level is the post-hook value.
        """
        cfg = self.cfg
        if cfg.multimodal:
            c = multimodal_residual(c, self._xmod_params(), cfg.i_end, cfg.h_end)
        if cfg.additive_context:
            x = c
            first = None
            for i in range(2, cfg.n_context_layers + 1):
                W = self.store.leaf(f"m1.ff{i}.W")
                b = self.store.leaf(f"m1.ff{i}.b")
                x = relu(add(linear(x, W), b))
                if i == 2:
                    if first_layer_hook is not None:
                        x = first_layer_hook(x)
                    first = x
            return x, first

        first = pool_layer(
            c,
            c,
            self.store.leaf("m1.pool2.W"),
            self.store.leaf("m1.pool2.b"),
            cfg.activation,
        )
        if first_layer_hook is not None:
            first = first_layer_hook(first)
        x = first
        for i in range(3, cfg.n_context_layers + 1):
            x = pool_layer(
                x,
                c,
                self.store.leaf(f"m1.pool{i}.W"),
                self.store.leaf(f"m1.pool{i}.b"),
                cfg.activation,
            )
        return x, first
