"""Central finite-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor

# Elementwise relative error uses max(|analytic|, |numeric|, DENOM_FLOOR) as the
# denominator so entries whose true gradient is ~0 are judged absolutely.
DENOM_FLOOR = 1e-6


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    checked: int
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_error(self) -> float:
        return float(max((p.max_rel_error for p in self.params), default=0.0))

    def failures(self) -> list[str]:
        return [p.name for p in self.params if not p.passed]


def gradient_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from the current ``params`` on each call.
    With ``max_coords`` set, only that many seeded random entries per
    parameter are perturbed.
    """
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    out = f()
    out.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            ana = a_flat[i]
            err = abs(ana - num) / max(abs(ana), abs(num), DENOM_FLOOR)
            worst = max(worst, err)
        report.params.append(ParamCheck(name, float(worst), int(len(idx)), bool(worst < tolerance)))
    for p in params.values():
        p.grad = None
    return report
