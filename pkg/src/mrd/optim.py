"""Parameter packing, a deterministic L-BFGS maximizer, and gradient checking.

Positive parameters travel through the optimizer as logs, so every finite
unconstrained vector maps to a valid parameter set. The maximizer is a
limited-memory quasi-Newton ascent with an Armijo backtracking line search:
the recorded objective trace never decreases, reruns on identical inputs are
bit-identical, and non-finite trial values are rejected by step halving.
"""

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionError, NumericalError

IDENTITY = "identity"
LOG = "log"

#: line-search sufficient-decrease constant and history length
ARMIJO_C1 = 1e-4
LBFGS_MEMORY = 10
MAX_HALVINGS = 50


class LayoutEntry(NamedTuple):
    name: str
    shape: tuple[int, ...]
    transform: str  # IDENTITY or LOG


@dataclass
class ParamLayout:
    """Ordered mapping between named constrained arrays and one flat vector."""

    entries: list[LayoutEntry]

    @property
    def size(self) -> int:
        return sum(int(np.prod(e.shape, dtype=int)) for e in self.entries)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def pack(self, values: dict) -> np.ndarray:
        """Constrained values -> unconstrained flat vector (log for positives)."""
        out = np.empty(self.size)
        pos = 0
        for e in self.entries:
            n = int(np.prod(e.shape, dtype=int))
            v = np.asarray(values[e.name], dtype=float)
            if v.shape != e.shape and not (v.shape == () and e.shape == ()):
                raise DimensionError(
                    f"parameter {e.name!r} has shape {v.shape}, layout expects {e.shape}"
                )
            flat = v.reshape(n)
            out[pos : pos + n] = np.log(flat) if e.transform == LOG else flat
            pos += n
        return out

    def unpack(self, x: np.ndarray) -> dict:
        """Unconstrained flat vector -> dict of constrained arrays."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise DimensionError(f"vector has shape {x.shape}, layout needs ({self.size},)")
        values = {}
        pos = 0
        with np.errstate(over="ignore"):
            for e in self.entries:
                n = int(np.prod(e.shape, dtype=int))
                flat = x[pos : pos + n]
                v = np.exp(flat) if e.transform == LOG else flat.copy()
                values[e.name] = float(v[0]) if e.shape == () else v.reshape(e.shape)
                pos += n
        return values

    def pack_grad(self, grads: dict, values: dict) -> np.ndarray:
        """Chain constrained-space gradients into the unconstrained vector."""
        out = np.empty(self.size)
        pos = 0
        for e in self.entries:
            n = int(np.prod(e.shape, dtype=int))
            g = np.asarray(grads[e.name], dtype=float).reshape(n)
            if e.transform == LOG:
                g = g * np.asarray(values[e.name], dtype=float).reshape(n)
            out[pos : pos + n] = g
            pos += n
        return out


@dataclass
class OptimConfig:
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-4
    objective_tolerance: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (self.gradient_tolerance > 0 and self.objective_tolerance > 0):
            raise ValueError("tolerances must be strictly positive")


@dataclass
class MaximizeResult:
    x: np.ndarray
    value: float
    trace: list[float]
    reason: str
    n_evals: int = 0


def maximize(
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    config: OptimConfig | None = None,
) -> MaximizeResult:
    """Maximize a smooth objective with L-BFGS ascent and backtracking.

    fun_and_grad(x) must return (value, gradient). Terminates when the
    gradient max-norm drops below gradient_tolerance, the objective improves
    by less than objective_tolerance, the iteration budget runs out, or the
    line search stalls. Raises NumericalError if the objective is non-finite
    at x0 or stays non-finite through MAX_HALVINGS consecutive step
    rejections.
    """
    config = config or OptimConfig()
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_and_grad(x)
    n_evals = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericalError("objective is not finite at the starting point")
    trace = [float(f)]

    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    reason = "max_iterations"

    for _ in range(config.max_iterations):
        if float(np.max(np.abs(g))) <= config.gradient_tolerance:
            reason = "gradient_tolerance"
            break

        # two-loop recursion on the negative objective; d is an ascent direction
        d = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * float(s @ d)
            d -= a * y
            alphas.append(a)
        if y_hist:
            y_last = y_hist[-1]
            gamma = float(s_hist[-1] @ y_last) / float(y_last @ y_last)
            d *= gamma
        for s, y, rho, a in zip(s_hist, y_hist, rho_hist, reversed(alphas)):
            b = rho * float(y @ d)
            d += (a - b) * s
        slope = float(g @ d)
        if slope <= 0.0 or not np.all(np.isfinite(d)):
            d = g.copy()
            slope = float(g @ g)
            if slope == 0.0:
                reason = "gradient_tolerance"
                break

        # first iteration runs along the raw gradient; start with a step
        # scaled to its magnitude instead of burning halvings
        if y_hist:
            step = 1.0
        else:
            step = min(1.0, 1.0 / max(1.0, float(np.max(np.abs(g)))))
        accepted = False
        nonfinite_streak = 0
        for _halving in range(MAX_HALVINGS):
            x_new = x + step * d
            f_new, g_new = fun_and_grad(x_new)
            n_evals += 1
            if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
                nonfinite_streak += 1
                if nonfinite_streak >= MAX_HALVINGS:
                    break
                step *= 0.5
                continue
            nonfinite_streak = 0
            if f_new >= f + ARMIJO_C1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if nonfinite_streak >= MAX_HALVINGS:
            raise NumericalError(
                f"objective stayed non-finite through {MAX_HALVINGS} step rejections"
            )
        if not accepted:
            if s_hist:
                # a stale quasi-Newton direction can stall the line search;
                # drop the memory and retry along the raw gradient
                s_hist, y_hist, rho_hist = [], [], []
                continue
            reason = "line_search_failure"
            break

        s_vec = x_new - x
        y_vec = g - g_new  # curvature pair of the negated objective
        sy = float(s_vec @ y_vec)
        improvement = f_new - f
        stalled = improvement <= config.objective_tolerance
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if stalled:
            if s_hist:
                s_hist, y_hist, rho_hist = [], [], []
                continue
            reason = "objective_tolerance"
            break
        if sy > 1e-12 * float(np.linalg.norm(s_vec) * np.linalg.norm(y_vec) + 1e-300):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > LBFGS_MEMORY:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

    return MaximizeResult(x=x, value=float(f), trace=trace, reason=reason, n_evals=n_evals)


@dataclass
class FiniteDiffReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    worst_index: int


def finite_diff_check(
    fun_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    step: float = 1e-6,
) -> FiniteDiffReport:
    """Compare the analytic gradient against central finite differences.

    Relative error per coordinate uses max(|analytic|, |numeric|, 1e-8) as
    denominator.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    _, analytic = fun_and_grad(x)
    numeric = np.empty_like(analytic)
    for i in range(x.shape[0]):
        xp = x.copy()
        xp[i] += step
        fp, _ = fun_and_grad(xp)
        xm = x.copy()
        xm[i] -= step
        fm, _ = fun_and_grad(xm)
        numeric[i] = (fp - fm) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return FiniteDiffReport(
        analytic=analytic,
        numeric=numeric,
        rel_errors=rel,
        max_rel_error=float(rel[worst]),
        worst_index=worst,
    )
