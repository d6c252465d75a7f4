"""Central finite-difference verification of analytic gradients.

The gradient contract for the whole package: for any composed forward pass,
the tape's gradients must match central differences coordinate by
coordinate. Loss builders must be deterministic functions of the parameter
values (re-seed any RNG inside the builder).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from . import autodiff
from .params import ParameterStore


@dataclass
class GradCheckReport:
    checked: int = 0
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def worst(self) -> float:
        return max((f[4] for f in self.failures), default=0.0)

    def summary(self) -> str:
        if self.ok:
            return f"gradcheck OK: {self.checked} coordinates"
        lines = [f"gradcheck FAILED: {len(self.failures)}/{self.checked} coordinates"]
        for name, i, a, fd, err in self.failures[:10]:
            lines.append(f"  {name}[{i}]: analytic={a:.6g} fd={fd:.6g} rel={err:.3g}")
        return "\n".join(lines)


def check_gradients(
    store: ParameterStore,
    loss_fn,
    names=None,
    h: float = 1e-4,
    rtol: float = 1e-4,
    atol: float = 5e-8,
) -> GradCheckReport:
    """Compare tape gradients of loss_fn() against central finite differences.

    Runs in the caller's precision; use float64 for trustworthy differences.
    The absolute floor sits at the roundoff noise of a central difference
    with h=1e-4 on an O(1) loss (about (eps_f64 * |L|) / h = 1e-8), so
    near-zero coordinates are compared against what the oracle can resolve.
    """
    if np.dtype(autodiff.default_dtype()).itemsize < 8:
        raise ConfigError("finite-difference checks require float64 mode")

    store.zero_grads()
    loss = loss_fn()
    autodiff.backward(loss)
    analytic = {n: store[n].grad.copy() for n in store.names() if store[n].trainable}

    if names is None:
        names = [n for n in store.names() if store[n].trainable]

    report = GradCheckReport()
    with autodiff.no_grad():
        for name in names:
            values = store[name].tensor
            flat = values.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2.0 * h)
                a = float(a_flat[i])
                err = abs(a - fd)
                report.checked += 1
                if err > atol + rtol * max(abs(a), abs(fd)):
                    rel = err / max(abs(a), abs(fd), 1e-30)
                    report.failures.append((name, i, a, fd, rel))
    store.zero_grads()
    return report
