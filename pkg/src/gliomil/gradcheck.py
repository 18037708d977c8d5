"""Central finite-difference verification of analytic gradients.

``grad_check`` takes a closure that rebuilds a scalar loss from a set of
named parameter tensors, differentiates it analytically, then perturbs
each parameter entry by +/-h and compares. The comparison is relative
where the gradients have magnitude and absolute near zero, so constant
losses (true gradient 0) pass on FD noise alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
_ABS_FLOOR = 1e-6  # below this magnitude, compare absolutely


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    worst_index: int  # flat index of the worst entry
    passed: bool


@dataclass
class GradCheckReport:
    step: float
    tol: float
    params: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def failures(self) -> list:
        return [p for p in self.params if not p.passed]

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def summary(self) -> str:
        lines = []
        for p in self.params:
            tag = "ok" if p.passed else "FAIL"
            lines.append(f"{tag:4s} {p.name}: max rel err {p.max_rel_err:.3e}")
        return "\n".join(lines)


def _error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric))
    diff = abs(analytic - numeric)
    if denom < _ABS_FLOOR:
        return diff
    return diff / denom


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
    coords: Optional[Mapping[str, Sequence[int]]] = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``coords`` optionally restricts each parameter to a subset of flat
    entry indices (for sampling large models); by default every entry is
    perturbed. Parameter data is restored bit-exactly afterwards.
    """
    for p in params.values():
        p.grad = None
    loss = f()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradCheckReport(step=h, tol=tol)
    for name, p in params.items():
        flat = p.data.ravel()
        idxs = range(flat.size) if coords is None else coords.get(name, range(flat.size))
        worst = 0.0
        worst_i = -1
        for i in idxs:
            orig = float(flat[i])
            flat[i] = orig + h
            with no_grad():
                f_plus = float(f().data)
            flat[i] = orig - h
            with no_grad():
                f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = _error(float(analytic[name].ravel()[i]), numeric)
            if err > worst:
                worst, worst_i = err, i
        report.params.append(
            ParamCheck(name=name, max_rel_err=worst, worst_index=worst_i, passed=worst <= tol)
        )
    return report
