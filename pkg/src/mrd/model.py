"""Model assembly, PCA initialization, training, and latent segmentation.

A model is a value: training and parameter updates return new instances, so a
trained model can be shared freely between readers.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .bound import LatentPrior, ViewParams, bound_grads, total_bound
from .errors import DimensionError, MrdError
from .kernels import ArdKernelParams
from .optim import IDENTITY, LOG, LayoutEntry, OptimConfig, ParamLayout, maximize
from .psi import VariationalLatent

#: iterations with relevance weights frozen at the start of training, letting
#: q(X) settle before dimensions can be switched off
DEFAULT_WEIGHT_FREEZE = 50

#: initial per-point latent variance
INIT_LATENT_VARIANCE = 0.1

#: initial noise variance as a fraction of per-view data variance
INIT_NOISE_FRACTION = 0.01


@dataclass
class MrdModel:
    """All views plus the shared latent distribution and its prior."""

    views: list[ViewParams]
    q_latent: VariationalLatent
    prior: LatentPrior

    def __post_init__(self):
        if not self.views:
            raise ValueError("a model needs at least one view")
        N = self.q_latent.n_points
        Q = self.q_latent.n_dims
        names = set()
        for v in self.views:
            if v.name in names:
                raise ValueError(f"duplicate view name {v.name!r}")
            names.add(v.name)
            if v.n_points != N:
                raise DimensionError(
                    f"view {v.name!r} has {v.n_points} rows, q(X) has {N}"
                )
            if v.kernel.n_dims != Q or v.inducing.shape[1] != Q:
                raise DimensionError(
                    f"view {v.name!r} does not match latent dimensionality {Q}"
                )
        if self.prior.is_dynamical and self.prior.timestamps.shape[0] != N:
            raise DimensionError("dynamical prior timestamps must have N entries")

    @property
    def n_points(self) -> int:
        return self.q_latent.n_points

    @property
    def n_latent(self) -> int:
        return self.q_latent.n_dims

    def view(self, name: str) -> ViewParams:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(f"no view named {name!r}; have {[v.name for v in self.views]}")

    def view_names(self) -> list[str]:
        return [v.name for v in self.views]


def _standardize_columns(data: np.ndarray):
    center = data.mean(axis=0)
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (data - center) / scale, center, scale


def init_model(
    views,
    Q: int,
    M: int,
    prior: LatentPrior | str = "standard",
    seed: int = 0,
    standardize: bool = True,
) -> MrdModel:
    """Build an untrained model from raw data matrices.

    Parameters
    ----------
    views : dict mapping view name to an N x D array, or a list of arrays
        (named view1, view2, ... in order).
    Q : latent dimensionality; choose generously, relevance weights prune.
    M : number of inducing inputs per view, at most N.
    prior : "standard" or a LatentPrior.
    seed : root seed for the inducing-subset draws.
    standardize : standardize each column to zero mean, unit variance; the
        transform is recorded on the view and applied to test data.

    The latent means are the first Q principal-component projections of the
    column-wise concatenation of all (standardized) views, rescaled to unit
    variance per latent dimension.
    """
    if isinstance(views, dict):
        items = list(views.items())
    else:
        items = [(f"view{i + 1}", v) for i, v in enumerate(views)]
    if not items:
        raise ValueError("need at least one view")
    data = [np.asarray(v, dtype=float) for _, v in items]
    N = data[0].shape[0]
    for (name, _), d in zip(items, data):
        if d.ndim != 2 or d.shape[0] != N:
            raise DimensionError(
                f"view {name!r} has {d.shape[0]} rows, expected {N} as in the first view"
            )
    total_dim = sum(d.shape[1] for d in data)
    if not 1 <= Q < total_dim:
        raise ValueError(
            f"latent dimensionality {Q} must lie in [1, {total_dim - 1}] "
            f"for {total_dim} total data columns"
        )
    if not 1 <= M <= N:
        raise ValueError(f"inducing count {M} must lie in [1, {N}]")

    stats = []
    for d in data:
        if standardize:
            stats.append(_standardize_columns(d))
        else:
            stats.append((d.copy(), np.zeros(d.shape[1]), np.ones(d.shape[1])))

    concat = np.hstack([sd for sd, _, _ in stats])
    concat = concat - concat.mean(axis=0)
    U, S, _ = np.linalg.svd(concat, full_matrices=False)
    k = min(Q, S.shape[0])
    means = np.zeros((N, Q))
    means[:, :k] = U[:, :k] * S[:k]
    col_std = means.std(axis=0)
    means = means / np.where(col_std > 0, col_std, 1.0)
    variances = np.full((N, Q), INIT_LATENT_VARIANCE)
    q_latent = VariationalLatent(means, variances)

    if isinstance(prior, str):
        if prior != "standard":
            raise ValueError(f"unknown prior kind {prior!r}")
        prior = LatentPrior.standard()

    built = []
    for (name, _), (sd, center, scale) in zip(items, stats):
        rng = seeding.stream(seed, "inducing", name)
        idx = rng.choice(N, size=M, replace=False)
        built.append(
            ViewParams(
                name=name,
                data=sd,
                kernel=ArdKernelParams(variance=1.0, weights=np.ones(Q)),
                noise_variance=max(INIT_NOISE_FRACTION * float(sd.var()), 1e-8),
                inducing=means[idx].copy(),
                center=center,
                scale=scale,
            )
        )
    return MrdModel(views=built, q_latent=q_latent, prior=prior)


# ---------------------------------------------------------------------------
# parameter layout and objective
# ---------------------------------------------------------------------------

def param_layout(model: MrdModel, exclude: tuple[str, ...] = ()) -> ParamLayout:
    """Layout over all free parameters; names in exclude are left out.

    Exclusion matches either a full entry name or its final component
    (e.g. "kernel_weights" freezes the weights of every view).
    """
    entries = []

    def want(name: str) -> bool:
        return name not in exclude and name.rsplit(".", 1)[-1] not in exclude

    for v in model.views:
        Q = v.kernel.n_dims
        candidates = [
            (f"views.{v.name}.kernel_variance", (), LOG),
            (f"views.{v.name}.kernel_weights", (Q,), LOG),
            (f"views.{v.name}.noise_variance", (), LOG),
            (f"views.{v.name}.inducing", v.inducing.shape, IDENTITY),
        ]
        entries.extend(LayoutEntry(*c) for c in candidates if want(c[0]))
    shape = model.q_latent.means.shape
    if want("latent.means"):
        entries.append(LayoutEntry("latent.means", shape, IDENTITY))
    if want("latent.variances"):
        entries.append(LayoutEntry("latent.variances", shape, LOG))
    if model.prior.is_dynamical:
        if want("prior.temporal_variance"):
            entries.append(LayoutEntry("prior.temporal_variance", (), LOG))
        if want("prior.temporal_lengthscale"):
            entries.append(LayoutEntry("prior.temporal_lengthscale", (), LOG))
    return ParamLayout(entries)


def model_params(model: MrdModel) -> dict:
    """Current constrained parameter values keyed by layout name."""
    values = {}
    for v in model.views:
        values[f"views.{v.name}.kernel_variance"] = v.kernel.variance
        values[f"views.{v.name}.kernel_weights"] = v.kernel.weights
        values[f"views.{v.name}.noise_variance"] = v.noise_variance
        values[f"views.{v.name}.inducing"] = v.inducing
    values["latent.means"] = model.q_latent.means
    values["latent.variances"] = model.q_latent.variances
    if model.prior.is_dynamical:
        values["prior.temporal_variance"] = model.prior.temporal.variance
        values["prior.temporal_lengthscale"] = model.prior.temporal.lengthscale
    return values


def with_params(model: MrdModel, values: dict) -> MrdModel:
    """New model with the given constrained parameters substituted in."""
    views = []
    for v in model.views:
        kern = ArdKernelParams(
            variance=float(values.get(f"views.{v.name}.kernel_variance", v.kernel.variance)),
            weights=np.asarray(
                values.get(f"views.{v.name}.kernel_weights", v.kernel.weights), dtype=float
            ),
        )
        views.append(
            replace(
                v,
                kernel=kern,
                noise_variance=float(
                    values.get(f"views.{v.name}.noise_variance", v.noise_variance)
                ),
                inducing=np.asarray(
                    values.get(f"views.{v.name}.inducing", v.inducing), dtype=float
                ),
            )
        )
    q = VariationalLatent(
        np.asarray(values.get("latent.means", model.q_latent.means), dtype=float),
        np.asarray(values.get("latent.variances", model.q_latent.variances), dtype=float),
    )
    prior = model.prior
    if prior.is_dynamical and (
        "prior.temporal_variance" in values or "prior.temporal_lengthscale" in values
    ):
        temporal = replace(
            prior.temporal,
            variance=float(values.get("prior.temporal_variance", prior.temporal.variance)),
            lengthscale=float(
                values.get("prior.temporal_lengthscale", prior.temporal.lengthscale)
            ),
        )
        prior = replace(prior, temporal=temporal)
    return MrdModel(views=views, q_latent=q, prior=prior)


def make_objective(model: MrdModel, layout: ParamLayout):
    """Closure f(x) -> (bound, packed gradient) over the unconstrained vector.

    Factorization failures surface as -inf so the line search backs off
    instead of aborting the run.
    """
    base = model_params(model)

    def fun(x):
        values = dict(base)
        values.update(layout.unpack(x))
        for entry in layout.entries:
            v = values[entry.name]
            if not np.all(np.isfinite(v)):
                return -np.inf, np.zeros(layout.size)
            # keep positive parameters inside the numerically meaningful
            # range; beyond it the bound is cancellation noise
            if entry.transform == LOG:
                lo = 1e-9 if entry.name.endswith("noise_variance") else 1e-14
                if np.any(np.less(v, lo)) or np.any(np.greater(v, 1e14)):
                    return -np.inf, np.zeros(layout.size)
        try:
            m = with_params(model, values)
            val, grads = bound_grads(m)
            return val, layout.pack_grad(grads, values)
        except (MrdError, ValueError, OverflowError, FloatingPointError, np.linalg.LinAlgError):
            # out-of-range trial step (overflowed/underflowed positives,
            # failed factorization): report -inf so the line search backs off
            return -np.inf, np.zeros(layout.size)

    return fun


def total_bound_grad(model: MrdModel) -> np.ndarray:
    """Gradient of the bound over all free parameters, in packed layout order."""
    layout = param_layout(model)
    _, grads = bound_grads(model)
    return layout.pack_grad(grads, model_params(model))


def train(
    model: MrdModel,
    config: OptimConfig | None = None,
    weight_freeze_iterations: int = DEFAULT_WEIGHT_FREEZE,
) -> tuple[MrdModel, list[float]]:
    """Maximize the bound jointly over all parameters.

    Runs an initial phase with the relevance weights frozen (so the latent
    arrangement settles before dimensions can switch off), then optimizes
    everything jointly. The concatenated objective trace is non-decreasing
    and the returned model never scores below the input model.
    """
    config = config or OptimConfig()
    trace: list[float] = []
    remaining = config.max_iterations

    if weight_freeze_iterations > 0 and remaining > 0:
        phase = min(weight_freeze_iterations, remaining)
        layout = param_layout(model, exclude=("kernel_weights",))
        res = maximize(
            make_objective(model, layout),
            layout.pack(model_params(model)),
            replace(config, max_iterations=phase),
        )
        model = with_params(model, layout.unpack(res.x))
        trace.extend(res.trace)
        remaining -= len(res.trace) - 1

    if remaining > 0:
        layout = param_layout(model)
        res = maximize(
            make_objective(model, layout),
            layout.pack(model_params(model)),
            replace(config, max_iterations=remaining),
        )
        model = with_params(model, layout.unpack(res.x))
        trace.extend(res.trace[1:] if trace else res.trace)
    return model, trace


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------

def normalized_weights(view: ViewParams) -> np.ndarray:
    """Relevance weights scaled into [0, 1] by the view's maximum weight."""
    w = view.kernel.weights
    top = float(w.max()) if w.size else 0.0
    if top <= 0:
        return np.zeros_like(w)
    return w / top


@dataclass
class Segmentation:
    """Partition of latent dimensions by which views switched them on.

    shared holds dimensions on in every view; private maps a view name to
    dimensions on only in that view; partial (non-empty only for three or
    more views) maps a tuple of view names to dimensions on exactly in that
    proper subset; inactive holds dimensions on in no view. delta_rel is the
    relative threshold and thresholds the resulting absolute weight cutoff
    per view.
    """

    shared: tuple[int, ...]
    private: dict[str, tuple[int, ...]]
    partial: dict[tuple[str, ...], tuple[int, ...]]
    inactive: tuple[int, ...]
    delta_rel: float
    thresholds: dict[str, float]

    def role_counts(self) -> dict:
        return {
            "shared": len(self.shared),
            "private": {name: len(dims) for name, dims in self.private.items()},
            "partial": sum(len(d) for d in self.partial.values()),
            "inactive": len(self.inactive),
        }


def segment(model: MrdModel, delta_rel: float = 0.01) -> Segmentation:
    """Classify latent dimensions as shared / private / inactive.

    A dimension is "on" for a view when its normalized weight exceeds
    delta_rel. Works for any number of views; with a single view every "on"
    dimension is reported as private to it.
    """
    if not 0.0 < delta_rel < 1.0:
        raise ValueError(f"delta_rel must lie strictly within (0, 1), got {delta_rel}")
    Q = model.n_latent
    names = model.view_names()
    on = {}
    thresholds = {}
    for v in model.views:
        nw = normalized_weights(v)
        on[v.name] = nw > delta_rel
        thresholds[v.name] = delta_rel * float(v.kernel.weights.max())
    shared, inactive = [], []
    private: dict[str, list[int]] = {name: [] for name in names}
    partial: dict[tuple[str, ...], list[int]] = {}
    for qdim in range(Q):
        active = tuple(name for name in names if on[name][qdim])
        if len(active) == len(names):
            shared.append(qdim)
        elif len(active) == 0:
            inactive.append(qdim)
        elif len(active) == 1:
            private[active[0]].append(qdim)
        else:
            partial.setdefault(active, []).append(qdim)
    return Segmentation(
        shared=tuple(shared),
        private={k: tuple(v) for k, v in private.items()},
        partial={k: tuple(v) for k, v in partial.items()},
        inactive=tuple(inactive),
        delta_rel=delta_rel,
        thresholds=thresholds,
    )
