"""Covariance functions for the view mappings and the temporal latent prior.

The view mappings use an exponentiated-quadratic kernel with one non-negative
relevance weight per latent dimension,

    k(x, x') = variance * exp(-1/2 * sum_q w_q (x_q - x'_q)^2),

where a weight acts as an inverse squared lengthscale: driving w_q to zero
switches dimension q off for that view. The temporal prior uses a plain
exponentiated-quadratic over timestamps with a fixed diagonal jitter.

Gradients are exposed as vector-Jacobian products: each ``*_grads`` function
takes the sensitivity of some downstream scalar with respect to the kernel
matrix and returns its sensitivities with respect to the kernel inputs and
parameters, which is the layout the bound optimizer consumes.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionError


@dataclass
class ArdKernelParams:
    """Signal variance and per-dimension relevance weights."""

    variance: float
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 1:
            raise DimensionError(f"weights must be a vector, got shape {self.weights.shape}")
        if not self.variance > 0:
            raise ValueError(f"kernel variance must be positive, got {self.variance}")
        if np.any(self.weights < 0):
            raise ValueError("relevance weights must be non-negative")

    @property
    def n_dims(self) -> int:
        return self.weights.shape[0]


@dataclass
class TemporalKernelParams:
    """Exponentiated-quadratic kernel over timestamps, plus diagonal jitter."""

    variance: float
    lengthscale: float
    jitter: float = 1e-6

    def __post_init__(self):
        for name in ("variance", "lengthscale", "jitter"):
            if not getattr(self, name) > 0:
                raise ValueError(f"temporal {name} must be strictly positive")


def _check_inputs(params: ArdKernelParams, Xa: np.ndarray, Xb: np.ndarray):
    Xa = np.asarray(Xa, dtype=float)
    Xb = np.asarray(Xb, dtype=float)
    Q = params.n_dims
    if Xa.ndim != 2 or Xb.ndim != 2:
        raise DimensionError("kernel inputs must be 2-d arrays of shape (n, Q)")
    if Xa.shape[1] != Q or Xb.shape[1] != Q:
        raise DimensionError(
            f"kernel inputs have {Xa.shape[1]} and {Xb.shape[1]} columns, "
            f"expected {Q} (length of weights)"
        )
    return Xa, Xb


def ard_kernel(params: ArdKernelParams, Xa: np.ndarray, Xb: np.ndarray) -> np.ndarray:
    """Kernel matrix with entries k(x_a, x_b) for all row pairs.

    The pairwise form (rather than an expanded inner-product form) keeps the
    square case bitwise symmetric.
    """
    Xa, Xb = _check_inputs(params, Xa, Xb)
    diff = Xa[:, None, :] - Xb[None, :, :]
    expo = np.einsum("abq,q->ab", diff * diff, 0.5 * params.weights)
    return params.variance * np.exp(-expo)


class ArdKernelGrads(NamedTuple):
    variance: float
    weights: np.ndarray
    Xa: np.ndarray
    Xb: np.ndarray


def ard_kernel_grads(
    params: ArdKernelParams,
    Xa: np.ndarray,
    Xb: np.ndarray,
    dK: np.ndarray,
    K: np.ndarray | None = None,
) -> ArdKernelGrads:
    """Pull the sensitivity dK back onto variance, weights and both inputs.

    When Xa and Xb are the same array (square case), the caller owns adding
    the two input gradients together.
    """
    Xa, Xb = _check_inputs(params, Xa, Xb)
    if K is None:
        K = ard_kernel(params, Xa, Xb)
    W = np.asarray(dK, dtype=float) * K
    diff = Xa[:, None, :] - Xb[None, :, :]
    d_variance = float(np.sum(W)) / params.variance
    d_weights = -0.5 * np.einsum("ab,abq->q", W, diff * diff)
    scaled = np.einsum("ab,abq->abq", W, diff) * params.weights
    d_Xa = -scaled.sum(axis=1)
    d_Xb = scaled.sum(axis=0)
    return ArdKernelGrads(d_variance, d_weights, d_Xa, d_Xb)


def temporal_kernel(params: TemporalKernelParams, ta: np.ndarray, tb: np.ndarray) -> np.ndarray:
    """Covariance over timestamps; jitter goes on the diagonal of the square case."""
    ta = np.asarray(ta, dtype=float).ravel()
    tb = np.asarray(tb, dtype=float).ravel()
    if not (np.all(np.isfinite(ta)) and np.all(np.isfinite(tb))):
        raise ValueError("timestamps must be finite")
    lag = ta[:, None] - tb[None, :]
    K = params.variance * np.exp(-(lag * lag) / (2.0 * params.lengthscale**2))
    if ta.shape == tb.shape and np.array_equal(ta, tb):
        K[np.diag_indices_from(K)] += params.jitter
    return K


class TemporalKernelGrads(NamedTuple):
    variance: float
    lengthscale: float


def temporal_kernel_grads(
    params: TemporalKernelParams, ta: np.ndarray, tb: np.ndarray, dK: np.ndarray
) -> TemporalKernelGrads:
    """Sensitivities of sum(dK * K) with respect to the temporal parameters.

    The fixed jitter carries no gradient.
    """
    ta = np.asarray(ta, dtype=float).ravel()
    tb = np.asarray(tb, dtype=float).ravel()
    lag2 = (ta[:, None] - tb[None, :]) ** 2
    K0 = params.variance * np.exp(-lag2 / (2.0 * params.lengthscale**2))
    W = np.asarray(dK, dtype=float) * K0
    d_variance = float(np.sum(W)) / params.variance
    d_lengthscale = float(np.sum(W * lag2)) / params.lengthscale**3
    return TemporalKernelGrads(d_variance, d_lengthscale)
