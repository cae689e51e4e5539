"""Expectations of kernel quantities under the Gaussian latent distribution.

With q(x_n) = N(mu_n, diag(s_n)) and the relevance-weighted kernel, the three
statistics consumed by the collapsed evidence term have closed forms. Writing
r = mu_n - xbar_m, c_q = 1 + w_q s_nq and d_q = 1 + 2 w_q s_nq:

    psi0        = sum_n E[k(x_n, x_n)] = N * variance
    psi1[n, m]  = E[k(x_n, xbar_m)]
                = variance * prod_q c_q^{-1/2} exp(-w_q r_q^2 / (2 c_q))
    psi2[m, m'] = sum_n E[k(xbar_m, x_n) k(x_n, xbar_m')]
                = variance^2 * sum_n prod_q d_q^{-1/2}
                  * exp(-w_q delta_q^2 / 4 - w_q e_q^2 / d_q),

with delta = xbar_m - xbar_m' and e = mu_n - (xbar_m + xbar_m') / 2. These
forms are validated against the Monte-Carlo estimator in this module, which
is the ground truth for the whole bound construction.

Gradients are exposed as a vector-Jacobian product (psi_stats_grads): given
sensitivities of a downstream scalar with respect to (psi0, psi1, psi2) it
returns sensitivities with respect to kernel parameters, variational means
and variances, and inducing inputs.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError
from .kernels import ArdKernelParams, ard_kernel


@dataclass
class VariationalLatent:
    """Diagonal Gaussian over latent points: N x Q means and variances."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if self.means.ndim != 2 or self.means.shape != self.variances.shape:
            raise DimensionError(
                f"means {self.means.shape} and variances {self.variances.shape} "
                "must both be (N, Q)"
            )
        if not np.all(np.isfinite(self.means)):
            raise ValueError("latent means must be finite")
        if not np.all(self.variances > 0):
            raise ValueError("latent variances must be strictly positive")

    @property
    def n_points(self) -> int:
        return self.means.shape[0]

    @property
    def n_dims(self) -> int:
        return self.means.shape[1]


@dataclass
class PsiStats:
    psi0: float
    psi1: np.ndarray  # N x M
    psi2: np.ndarray  # M x M


class PsiGrads(NamedTuple):
    variance: float
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    inducing: np.ndarray


def _check_shapes(params: ArdKernelParams, q: VariationalLatent, inducing: np.ndarray):
    inducing = np.asarray(inducing, dtype=float)
    Q = params.n_dims
    if q.n_dims != Q or inducing.ndim != 2 or inducing.shape[1] != Q:
        raise DimensionError(
            f"latent dimensionality mismatch: weights have {Q} entries, "
            f"q(X) has {q.n_dims} columns, inducing has shape {inducing.shape}"
        )
    return inducing


class _PsiCache(NamedTuple):
    """Forward intermediates reused by the backward pass."""

    r: np.ndarray      # N x M x Q   mu - xbar
    c: np.ndarray      # N x Q       1 + w s
    d: np.ndarray      # N x Q       1 + 2 w s
    psi1: np.ndarray   # N x M
    T: np.ndarray      # N x M x M   per-point psi2 contributions
    zbar: np.ndarray   # M x M x Q   pairwise inducing midpoints
    delta: np.ndarray  # M x M x Q   pairwise inducing differences


def _psi_forward(params: ArdKernelParams, q: VariationalLatent, inducing: np.ndarray):
    Z = _check_shapes(params, q, inducing)
    w = params.weights
    mu, s = q.means, q.variances

    c = 1.0 + w * s
    r = mu[:, None, :] - Z[None, :, :]
    log_psi1 = -0.5 * np.sum(np.log(c), axis=1)[:, None]
    log_psi1 = log_psi1 - 0.5 * np.einsum("nmq,nq->nm", r * r, w / c)
    psi1 = params.variance * np.exp(log_psi1)

    d = 1.0 + 2.0 * w * s
    delta = Z[:, None, :] - Z[None, :, :]
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])
    log_T = -0.25 * np.einsum("abq,q->ab", delta * delta, w)[None, :, :]
    log_T = log_T - 0.5 * np.sum(np.log(d), axis=1)[:, None, None]
    # accumulate the midpoint term one latent dimension at a time to keep
    # peak memory at N*M*M instead of N*M*M*Q
    log_T = np.broadcast_to(log_T, (q.n_points,) + delta.shape[:2]).copy()
    for qi in range(params.n_dims):
        e = mu[:, None, None, qi] - zbar[None, :, :, qi]
        log_T -= (w[qi] / d[:, qi])[:, None, None] * (e * e)
    T = params.variance**2 * np.exp(log_T)

    stats = PsiStats(
        psi0=q.n_points * params.variance, psi1=psi1, psi2=T.sum(axis=0)
    )
    return stats, _PsiCache(r, c, d, psi1, T, zbar, delta)


def psi_stats(params: ArdKernelParams, q: VariationalLatent, inducing: np.ndarray) -> PsiStats:
    """Closed-form psi statistics; reduces to plain kernel products as variances -> 0."""
    stats, _ = _psi_forward(params, q, inducing)
    return stats


def psi_stats_grads(
    params: ArdKernelParams,
    q: VariationalLatent,
    inducing: np.ndarray,
    d_psi0: float,
    d_psi1: np.ndarray,
    d_psi2: np.ndarray,
    cache: _PsiCache | None = None,
) -> PsiGrads:
    """Backward pass through the closed forms.

    d_psi0, d_psi1 and d_psi2 are the sensitivities of a downstream scalar
    with respect to the forward outputs; the return value holds that scalar's
    sensitivities with respect to the inputs.
    """
    Z = _check_shapes(params, q, inducing)
    if cache is None:
        _, cache = _psi_forward(params, q, inducing)
    w = params.weights
    mu, s = q.means, q.variances
    N, Q = mu.shape
    M = Z.shape[0]

    d_variance = float(d_psi0) * N
    d_weights = np.zeros(Q)
    d_means = np.zeros((N, Q))
    d_variances = np.zeros((N, Q))
    d_Z = np.zeros((M, Q))

    d_psi1 = np.zeros((N, M)) if np.isscalar(d_psi1) and d_psi1 == 0 else np.asarray(d_psi1)
    d_psi2 = np.zeros((M, M)) if np.isscalar(d_psi2) and d_psi2 == 0 else np.asarray(d_psi2)

    # --- psi1 path ---
    W1 = d_psi1 * cache.psi1                      # N x M
    if np.any(W1):
        r, c = cache.r, cache.c
        rc = r / c[:, None, :]
        d_variance += float(np.sum(W1)) / params.variance
        proj_n = np.einsum("nm,nmq->nq", W1, rc)
        d_means += -w * proj_n
        d_Z += w * np.einsum("nm,nmq->mq", W1, rc)
        row1 = W1.sum(axis=1)                     # N
        wr2 = np.einsum("nm,nmq->nq", W1, r * r)
        d_variances += 0.5 * (w / c) * ((w / c) * wr2 - row1[:, None])
        d_weights += np.sum(
            -0.5 * (s / c) * row1[:, None] - 0.5 * wr2 / (c * c), axis=0
        )

    # --- psi2 path ---
    W2 = d_psi2[None, :, :] * cache.T             # N x M x M
    if np.any(W2):
        d_var2 = cache.d
        d_variance += 2.0 * float(np.sum(W2)) / params.variance
        S0 = W2.sum(axis=(1, 2))                  # N
        W2s = W2 + W2.transpose(0, 2, 1)
        sum_n_W2 = W2.sum(axis=0)                 # M x M
        for qi in range(Q):
            e = mu[:, None, None, qi] - cache.zbar[None, :, :, qi]   # N x M x M
            We = W2 * e
            We_sum = We.sum(axis=(1, 2))          # N
            We2_sum = (We * e).sum(axis=(1, 2))   # N
            dq = d_var2[:, qi]
            d_means[:, qi] += -2.0 * w[qi] * We_sum / dq
            d_variances[:, qi] += -w[qi] * S0 / dq + 2.0 * w[qi] ** 2 * We2_sum / dq**2
            d_weights[qi] += float(
                -np.sum(s[:, qi] * S0 / dq)
                - 0.25 * np.sum(sum_n_W2 * cache.delta[:, :, qi] ** 2)
                - np.sum(We2_sum / dq**2)
            )
            # z_mq enters pair (m, b) through both the difference and midpoint
            half_delta = -0.5 * w[qi] * cache.delta[None, :, :, qi]
            mid = (w[qi] / dq)[:, None, None] * e
            d_Z[:, qi] += np.einsum("nmb->m", W2s * (half_delta + mid))

    return PsiGrads(d_variance, d_weights, d_means, d_variances, d_Z)


def psi_monte_carlo(
    params: ArdKernelParams,
    q: VariationalLatent,
    inducing: np.ndarray,
    n_samples: int,
    seed: int,
    chunk: int = 100_000,
) -> tuple[PsiStats, PsiStats]:
    """Monte-Carlo estimate of the psi statistics with standard errors.

    Draws x_n ~ q(x_n) independently per latent point and averages the exact
    kernel quantities. Deterministic given the seed. Returns (estimate,
    standard_errors); the psi0 standard error is exactly zero because
    k(x, x) is constant for this kernel.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    Z = _check_shapes(params, q, inducing)
    rng = np.random.default_rng(seed)
    N, Q = q.means.shape
    M = Z.shape[0]

    psi1_mean = np.zeros((N, M))
    psi1_se = np.zeros((N, M))
    psi2_mean = np.zeros((M, M))
    psi2_var = np.zeros((M, M))

    for n in range(N):
        s1 = np.zeros(M)
        s1_sq = np.zeros(M)
        s2 = np.zeros((M, M))
        s2_sq = np.zeros((M, M))
        remaining = n_samples
        while remaining > 0:
            take = min(chunk, remaining)
            x = q.means[n] + np.sqrt(q.variances[n]) * rng.standard_normal((take, Q))
            k = ard_kernel(params, x, Z)          # take x M
            s1 += k.sum(axis=0)
            s1_sq += (k * k).sum(axis=0)
            s2 += np.einsum("ta,tb->ab", k, k)
            # per-sample product squared: (k_a k_b)^2 = k_a^2 k_b^2
            s2_sq += np.einsum("ta,tb->ab", k * k, k * k)
            remaining -= take
        mean1 = s1 / n_samples
        var1 = np.maximum(s1_sq / n_samples - mean1**2, 0.0)
        psi1_mean[n] = mean1
        psi1_se[n] = np.sqrt(var1 / n_samples)
        mean2 = s2 / n_samples
        var2 = np.maximum(s2_sq / n_samples - mean2**2, 0.0)
        psi2_mean += mean2
        psi2_var += var2 / n_samples

    est = PsiStats(psi0=N * params.variance, psi1=psi1_mean, psi2=psi2_mean)
    se = PsiStats(psi0=0.0, psi1=psi1_se, psi2=np.sqrt(psi2_var))
    return est, se
