"""Finite-difference verification of backward passes.

`grad_check` compares reverse-mode gradients against central finite
differences (step 1e-5) for every parameter of a scalar-valued computation,
reporting the max relative error per parameter. For large models an entry
subsample per parameter keeps the check fast; the sample is seeded and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DiffTensor, Parameter

# Relative error denominator floor: absolute deviations below FLOOR*tol are
# indistinguishable from float64 finite-difference noise and do not count.
FLOOR = 1e-4


class GradCheckError(RuntimeError):
    """Non-finite value encountered while checking a parameter."""


@dataclass
class GradCheckReport:
    per_param: dict[str, float] = field(default_factory=dict)
    step: float = 1e-5

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol

    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in sorted(self.per_param.items())]
        return "\n".join(lines + [f"max: {self.max_rel_err:.3e}"])


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def _eval_scalar(f) -> float:
    out = f()
    if not isinstance(out, DiffTensor):
        raise TypeError("grad_check target must return a DiffTensor scalar")
    return out.item()


def grad_check(f, params: list[Parameter], tol: float = 1e-5, step: float = 1e-5,
               max_entries_per_param: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare backward gradients of f() against central finite differences.

    f is a zero-argument scalar-valued computation closed over `params`; it is
    re-evaluated with entries of each parameter nudged by +-step. When
    `max_entries_per_param` is set, a seeded random subsample of entries is
    checked per parameter instead of all of them.

    Raises GradCheckError (naming the parameter) on non-finite values.
    """
    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise TypeError(f"grad_check target must be scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise GradCheckError("non-finite objective value")
    out.backward()

    analytic = {}
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise GradCheckError(f"non-finite analytic gradient for parameter {p.name!r}")
        analytic[p.name] = g.copy()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(step=step)
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            entries = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            entries = range(n)
        worst = 0.0
        ga = analytic[p.name].reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + step
            fp = _eval_scalar(f)
            flat[i] = orig - step
            fm = _eval_scalar(f)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckError(f"non-finite perturbed value for parameter {p.name!r}")
            numeric = (fp - fm) / (2.0 * step)
            worst = max(worst, _rel_err(ga[i], numeric))
        report.per_param[p.name] = worst
    return report
