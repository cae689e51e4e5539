"""The collapsed variational lower bound and its analytic gradient.

For one view with data Y (N x D), noise precision beta = 1 / noise_variance,
inducing-input kernel K = k(Xbar, Xbar) and psi statistics under q(X), the
evidence contribution after analytically eliminating the free-form
distribution over inducing values is

    L = N D / 2 * log(beta / 2 pi)
        + D / 2 * (log|K| - log|A|)
        - beta / 2 * tr(Y Y^T)
        + beta^2 / 2 * tr(A^{-1} Psi1^T (Y Y^T) Psi1)
        - D beta / 2 * psi0
        + D beta / 2 * tr(K^{-1} Psi2),          A = K + beta Psi2.

The data matrix enters only through Y Y^T, which is cached per view, so each
evaluation costs O(N M^2 + M^3 + N^2 M) regardless of D. The full objective
sums the view terms (any number of views, one shared q(X)) and subtracts the
KL from the latent prior, which is either a standard normal or a temporal
Gaussian process evaluated block-diagonally over independent sequences.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .kernels import (
    ArdKernelParams,
    TemporalKernelParams,
    ard_kernel,
    ard_kernel_grads,
    temporal_kernel,
    temporal_kernel_grads,
)
from .linalg import chol_inverse, chol_logdet, chol_solve, jitter_cholesky
from .psi import PsiStats, VariationalLatent, _psi_forward, psi_stats_grads

LOG_2PI = np.log(2.0 * np.pi)


def precompute_data_gram(data: np.ndarray) -> np.ndarray:
    """The N x N product data @ data.T, computed once at model construction."""
    data = np.asarray(data, dtype=float)
    return data @ data.T


@dataclass
class ViewParams:
    """Everything one view contributes to the model.

    data holds the (possibly standardized) observations; center and scale
    record the per-column affine transform that maps stored rows back to
    original units via data * scale + center.
    """

    name: str
    data: np.ndarray
    kernel: ArdKernelParams
    noise_variance: float
    inducing: np.ndarray
    data_gram: np.ndarray = field(default=None)  # type: ignore[assignment]
    center: np.ndarray = field(default=None)     # type: ignore[assignment]
    scale: np.ndarray = field(default=None)      # type: ignore[assignment]

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.inducing = np.asarray(self.inducing, dtype=float)
        if self.data.ndim != 2:
            raise DimensionError("view data must be an N x D matrix")
        if not self.noise_variance > 0:
            raise ValueError("noise variance must be strictly positive")
        if self.inducing.ndim != 2 or self.inducing.shape[1] != self.kernel.n_dims:
            raise DimensionError(
                f"inducing inputs {self.inducing.shape} must have "
                f"{self.kernel.n_dims} columns"
            )
        if self.data_gram is None:
            self.data_gram = precompute_data_gram(self.data)
        else:
            self.data_gram = np.asarray(self.data_gram, dtype=float)
            if self.data_gram.shape != (self.data.shape[0],) * 2:
                raise DimensionError("data_gram must be N x N")
        if self.center is None:
            self.center = np.zeros(self.data.shape[1])
        if self.scale is None:
            self.scale = np.ones(self.data.shape[1])
        self.center = np.asarray(self.center, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)

    @property
    def n_points(self) -> int:
        return self.data.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.data.shape[1]

    @property
    def n_inducing(self) -> int:
        return self.inducing.shape[0]

    def original_units(self, rows: np.ndarray) -> np.ndarray:
        return rows * self.scale + self.center

    def standardized(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.center) / self.scale


@dataclass
class LatentPrior:
    """Prior over the latent points: standard normal or a temporal GP.

    The temporal variant is block-diagonal over sequence_ids: latent points in
    different sequences are a priori independent, points within a sequence are
    correlated through the temporal kernel over their timestamps.
    """

    kind: str = "standard"
    timestamps: np.ndarray | None = None
    sequence_ids: np.ndarray | None = None
    temporal: TemporalKernelParams | None = None

    @staticmethod
    def standard() -> "LatentPrior":
        return LatentPrior(kind="standard")

    @staticmethod
    def dynamical(
        timestamps: np.ndarray,
        sequence_ids: np.ndarray | None = None,
        temporal: TemporalKernelParams | None = None,
    ) -> "LatentPrior":
        timestamps = np.asarray(timestamps, dtype=float).ravel()
        if sequence_ids is None:
            sequence_ids = np.zeros(timestamps.shape[0], dtype=int)
        sequence_ids = np.asarray(sequence_ids).ravel()
        if sequence_ids.shape[0] != timestamps.shape[0]:
            raise DimensionError("timestamps and sequence_ids must have equal length")
        if not np.all(np.isfinite(timestamps)):
            raise ValueError("timestamps must be finite")
        for sid in np.unique(sequence_ids):
            t = timestamps[sequence_ids == sid]
            if np.any(np.diff(t) <= 0):
                raise ValueError(
                    f"timestamps must be strictly increasing within sequence {sid!r}"
                )
        if temporal is None:
            gaps = []
            for sid in np.unique(sequence_ids):
                t = timestamps[sequence_ids == sid]
                if t.shape[0] > 1:
                    gaps.append(np.median(np.diff(t)))
            scale = 5.0 * float(np.median(gaps)) if gaps else 1.0
            temporal = TemporalKernelParams(variance=1.0, lengthscale=scale)
        return LatentPrior(
            kind="dynamical",
            timestamps=timestamps,
            sequence_ids=sequence_ids,
            temporal=temporal,
        )

    @property
    def is_dynamical(self) -> bool:
        return self.kind == "dynamical"

    def blocks(self):
        """Index arrays for each independent sequence, in first-seen order."""
        ids = np.asarray(self.sequence_ids)
        _, first = np.unique(ids, return_index=True)
        for sid in ids[np.sort(first)]:
            yield np.flatnonzero(ids == sid)


class ViewTermGrads(NamedTuple):
    kernel_variance: float
    weights: np.ndarray
    noise_variance: float
    inducing: np.ndarray
    means: np.ndarray
    variances: np.ndarray


def _view_evidence(view: ViewParams, q: VariationalLatent, want_grads: bool):
    N, D = view.data.shape
    M = view.n_inducing
    if q.n_points != N:
        raise DimensionError(
            f"q(X) has {q.n_points} points, view {view.name!r} has {N} rows"
        )
    beta = 1.0 / view.noise_variance
    stats, cache = _psi_forward(view.kernel, q, view.inducing)
    psi0, psi1, psi2 = stats.psi0, stats.psi1, stats.psi2

    K_pure = ard_kernel(view.kernel, view.inducing, view.inducing)
    Lk, jit_k = jitter_cholesky(K_pure)
    A = K_pure + beta * psi2
    if jit_k:
        A[np.diag_indices_from(A)] += jit_k
    La, _ = jitter_cholesky(A)

    G = view.data_gram
    tr_G = float(np.trace(G))
    P = G @ psi1                               # N x M
    B = psi1.T @ P                             # M x M, symmetric
    AinvB = chol_solve(La, B)
    tr_AinvB = float(np.trace(AinvB))
    Kinv_psi2 = chol_solve(Lk, psi2)
    tr_Kinv_psi2 = float(np.trace(Kinv_psi2))

    value = (
        0.5 * N * D * (np.log(beta) - LOG_2PI)
        + 0.5 * D * chol_logdet(Lk)
        - 0.5 * D * chol_logdet(La)
        - 0.5 * beta * tr_G
        + 0.5 * beta**2 * tr_AinvB
        - 0.5 * D * beta * psi0
        + 0.5 * D * beta * tr_Kinv_psi2
    )
    if not want_grads:
        return float(value), None

    Ainv = chol_inverse(La)
    Kinv = chol_inverse(Lk)
    C2 = Ainv @ B @ Ainv                       # A^{-1} B A^{-1}
    d_psi1 = beta**2 * (P @ Ainv)
    d_psi2 = beta * (-0.5 * D * Ainv - 0.5 * beta**2 * C2 + 0.5 * D * Kinv)
    d_K = (
        0.5 * D * Kinv
        - 0.5 * D * Ainv
        - 0.5 * beta**2 * C2
        - 0.5 * D * beta * (Kinv @ psi2 @ Kinv)
    )
    d_psi0 = -0.5 * D * beta
    d_beta = (
        0.5 * N * D / beta
        - 0.5 * D * float(np.sum(Ainv * psi2))
        - 0.5 * tr_G
        + beta * tr_AinvB
        - 0.5 * beta**2 * float(np.sum(C2 * psi2))
        - 0.5 * D * psi0
        + 0.5 * D * tr_Kinv_psi2
    )
    d_noise = -(beta**2) * d_beta

    pg = psi_stats_grads(view.kernel, q, view.inducing, d_psi0, d_psi1, d_psi2, cache)
    kg = ard_kernel_grads(view.kernel, view.inducing, view.inducing, d_K, K_pure)
    grads = ViewTermGrads(
        kernel_variance=pg.variance + kg.variance,
        weights=pg.weights + kg.weights,
        noise_variance=float(d_noise),
        inducing=pg.inducing + kg.Xa + kg.Xb,
        means=pg.means,
        variances=pg.variances,
    )
    return float(value), grads


def view_evidence_term(view: ViewParams, q: VariationalLatent) -> float:
    """Collapsed evidence contribution of one view (the L term for that view)."""
    value, _ = _view_evidence(view, q, want_grads=False)
    return value


def view_evidence_term_grads(view: ViewParams, q: VariationalLatent):
    """Evidence term together with its gradients (constrained parameter space)."""
    return _view_evidence(view, q, want_grads=True)


def kl_standard(q: VariationalLatent) -> float:
    """KL from q(X) to an elementwise standard normal prior."""
    mu, s = q.means, q.variances
    return float(0.5 * np.sum(mu * mu + s - 1.0 - np.log(s)))


def kl_standard_grads(q: VariationalLatent):
    val = kl_standard(q)
    return val, q.means.copy(), 0.5 * (1.0 - 1.0 / q.variances)


def kl_dynamical(q: VariationalLatent, prior: LatentPrior) -> float:
    val, *_ = kl_dynamical_grads(q, prior, want_grads=False)
    return val


def kl_dynamical_grads(q: VariationalLatent, prior: LatentPrior, want_grads: bool = True):
    """KL from q(X) to the temporal GP prior, block-diagonal over sequences.

    Per latent dimension q and sequence block with kernel matrix Kt:
        KL = 1/2 [ tr(Kt^{-1} diag(s_q)) + mu_q^T Kt^{-1} mu_q
                   - n + log|Kt| - sum log s_q ].
    Returns (value, d_means, d_variances, d_temporal_variance,
    d_temporal_lengthscale); gradient slots are None when want_grads is False.
    """
    if not prior.is_dynamical:
        raise ValueError("kl_dynamical requires a dynamical prior")
    mu, s = q.means, q.variances
    N, Q = mu.shape
    if prior.timestamps.shape[0] != N:
        raise DimensionError(
            f"prior has {prior.timestamps.shape[0]} timestamps, q(X) has {N} points"
        )
    total = 0.0
    d_means = np.zeros_like(mu) if want_grads else None
    d_vars = np.zeros_like(s) if want_grads else None
    d_tv = 0.0
    d_tl = 0.0
    for idx in prior.blocks():
        t = prior.timestamps[idx]
        Kt = temporal_kernel(prior.temporal, t, t)
        L, _ = jitter_cholesky(Kt)
        n = idx.shape[0]
        mu_b = mu[idx]
        s_b = s[idx]
        Kinv = chol_inverse(L)
        Kinv_mu = Kinv @ mu_b
        diag_Kinv = np.diag(Kinv)
        total += 0.5 * (
            float(diag_Kinv @ s_b.sum(axis=1))
            + float(np.sum(mu_b * Kinv_mu))
            - n * Q
            + Q * chol_logdet(L)
            - float(np.sum(np.log(s_b)))
        )
        if want_grads:
            d_means[idx] = Kinv_mu
            d_vars[idx] = 0.5 * (diag_Kinv[:, None] - 1.0 / s_b)
            # dKL/dKt = 1/2 (Q Kt^{-1} - Kt^{-1} diag(sum_q s) Kt^{-1}
            #                - Kt^{-1} mu mu^T Kt^{-1})
            d_Kt = 0.5 * (
                Q * Kinv
                - (Kinv * s_b.sum(axis=1)) @ Kinv
                - Kinv_mu @ Kinv_mu.T
            )
            tg = temporal_kernel_grads(prior.temporal, t, t, d_Kt)
            d_tv += tg.variance
            d_tl += tg.lengthscale
    return float(total), d_means, d_vars, d_tv, d_tl


def total_bound(model) -> float:
    """The full objective: sum of view evidence terms minus the prior KL.

    Accepts any object exposing views, q_latent and prior (one or more views,
    a single shared q(X)).
    """
    value = sum(view_evidence_term(v, model.q_latent) for v in model.views)
    if model.prior.is_dynamical:
        value -= kl_dynamical(model.q_latent, model.prior)
    else:
        value -= kl_standard(model.q_latent)
    return float(value)


def bound_grads(model):
    """Objective value and its gradient for every free parameter.

    Returns (value, grads) where grads maps layout names
    (``views.<name>.kernel_variance`` ... ``latent.means`` ...) to arrays in
    the constrained parameter space.
    """
    q = model.q_latent
    value = 0.0
    grads: dict[str, np.ndarray | float] = {}
    d_means = np.zeros_like(q.means)
    d_vars = np.zeros_like(q.variances)
    for view in model.views:
        term, vg = view_evidence_term_grads(view, q)
        value += term
        grads[f"views.{view.name}.kernel_variance"] = vg.kernel_variance
        grads[f"views.{view.name}.kernel_weights"] = vg.weights
        grads[f"views.{view.name}.noise_variance"] = vg.noise_variance
        grads[f"views.{view.name}.inducing"] = vg.inducing
        d_means += vg.means
        d_vars += vg.variances
    if model.prior.is_dynamical:
        kl, km, kv, d_tv, d_tl = kl_dynamical_grads(q, model.prior)
        grads["prior.temporal_variance"] = -d_tv
        grads["prior.temporal_lengthscale"] = -d_tl
    else:
        kl, km, kv = kl_standard_grads(q)
    value -= kl
    grads["latent.means"] = d_means - km
    grads["latent.variances"] = d_vars - kv
    return float(value), grads
