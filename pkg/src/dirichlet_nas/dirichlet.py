"""Dirichlet architecture distribution: parameterization, sampling, pathwise
gradients, Laplace approximation and distance penalties.

Arrays follow the convention that the last axis indexes operations; leading
axes are sample axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import special
from .errors import ContractError, DomainError, NumericError

THETA_EPS = 1e-6


@dataclass
class LaplaceParams:
    mu: np.ndarray
    sigma_diag: np.ndarray


def beta_from_eta(eta):
    """Shifted ELU: beta = ELU(eta) + 1, strictly positive."""
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta)):
        raise DomainError("eta must be finite")
    return np.where(eta >= 0, eta + 1.0, np.exp(np.minimum(eta, 0.0)))


def elu_grad(eta):
    eta = np.asarray(eta, dtype=np.float64)
    return np.where(eta >= 0, 1.0, np.exp(np.minimum(eta, 0.0)))


def _check_beta(beta):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim == 0 or not np.all(np.isfinite(beta)) or np.any(beta <= 0):
        raise DomainError("concentrations must be a positive finite vector")
    return beta


def mean(beta):
    beta = _check_beta(beta)
    return beta / beta.sum(axis=-1, keepdims=True)


def clamp_simplex(theta, eps=THETA_EPS):
    theta = np.clip(theta, eps, 1.0 - eps)
    return theta / theta.sum(axis=-1, keepdims=True)


def sample_log(beta, rng: np.random.Generator, n: int | None = None):
    """Draw theta ~ Dir(beta) and return (clamped theta, unclamped log theta).

    Gammas are normalized in log space so tiny concentrations cannot produce
    an all-zero denominator.  The log values are exact even where theta is
    clamped, which matters for the score function at small beta.
    """
    beta = _check_beta(beta)
    size = beta.shape if n is None else (n,) + beta.shape
    if beta.shape[-1] == 1:
        return np.ones(size), np.zeros(size)
    logg = special.log_gamma_sample(beta, rng, size)
    logg = logg - logg.max(axis=-1, keepdims=True)
    g = np.exp(logg)
    tot = g.sum(axis=-1, keepdims=True)
    return clamp_simplex(g / tot), logg - np.log(tot)


def sample(beta, rng: np.random.Generator, n: int | None = None):
    """Draw theta ~ Dir(beta); shape (n, K) if n is given, else (K,)."""
    return sample_log(beta, rng, n)[0]


def _marginal_ratio(theta, beta):
    """-dF/da / f for each coordinate's Beta(beta_j, beta_tot - beta_j) marginal."""
    a = np.broadcast_to(beta, theta.shape)
    b = beta.sum(axis=-1, keepdims=True) - a
    x = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    dF = special.d_reg_inc_beta_da(x, a, b)
    logf = special.beta_log_pdf(x, a, b)
    ratio = -np.asarray(dF) / np.exp(logf)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite pathwise derivative")
    return ratio


def pathwise_jacobian(theta, beta):
    """J[..., i, j] = d theta_i / d beta_j for a Dirichlet sample."""
    beta = _check_beta(beta)
    theta = np.asarray(theta, dtype=np.float64)
    K = beta.shape[-1]
    if K == 1:
        return np.zeros(theta.shape + (1,))
    theta = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    ratio = _marginal_ratio(theta, beta)
    eye = np.eye(K)
    # (delta_ij - theta_i) / (1 - theta_j)
    tangent = (eye - theta[..., :, None]) / (1.0 - theta[..., None, :])
    return ratio[..., None, :] * tangent


def pathwise_vjp(theta, beta, grad_theta):
    """grad_theta^T J without forming J; O(K) per sample."""
    beta = _check_beta(beta)
    theta = np.asarray(theta, dtype=np.float64)
    grad_theta = np.asarray(grad_theta, dtype=np.float64)
    if grad_theta.shape != theta.shape:
        raise ContractError("grad_theta and theta shapes differ")
    if beta.shape[-1] == 1:
        return np.zeros_like(theta)
    theta = np.clip(theta, THETA_EPS, 1.0 - THETA_EPS)
    ratio = _marginal_ratio(theta, beta)
    inner = (grad_theta * theta).sum(axis=-1, keepdims=True)
    return ratio * (grad_theta - inner) / (1.0 - theta)


def grad_eta_from_grad_theta(grad_theta, theta, beta, eta):
    """Chain dL/dtheta through the pathwise Jacobian and the ELU map."""
    eta = np.asarray(eta, dtype=np.float64)
    beta = _check_beta(beta)
    if np.shape(grad_theta) != np.shape(theta) or eta.shape != beta.shape \
            or np.shape(theta)[-1] != beta.shape[-1]:
        raise ContractError("shape mismatch between grad_theta, theta, beta, eta")
    g_beta = pathwise_vjp(theta, beta, grad_theta)
    return g_beta * elu_grad(eta)


def anchor_penalty(eta, lam: float, kind: str = "squared"):
    """Distance of eta from the anchor eta = 0 (beta = 1).

    ``squared`` is lam * 0.5 * ||eta||^2; ``norm`` is lam * ||eta|| with a zero
    subgradient at the anchor.
    """
    eta = np.asarray(eta, dtype=np.float64)
    if kind == "squared":
        return float(lam * 0.5 * np.dot(eta, eta)), lam * eta
    if kind == "norm":
        nrm = float(np.linalg.norm(eta))
        if nrm == 0.0:
            return 0.0, np.zeros_like(eta)
        return lam * nrm, lam * eta / nrm
    raise ValueError(f"unknown penalty kind {kind!r}")


def kl_to_symmetric(beta) -> float:
    """KL(Dir(beta) || Dir(1, ..., 1))."""
    beta = _check_beta(beta)
    n = beta.shape[-1]
    tot = beta.sum()
    val = (special.log_gamma(tot) - np.sum(special.log_gamma(beta)) - special.log_gamma(float(n))
           + np.sum((beta - 1.0) * (special.digamma(beta) - special.digamma(tot))))
    return float(val)


def kl_to_symmetric_grad(beta):
    beta = _check_beta(beta)
    tot = beta.sum()
    n = beta.shape[-1]
    return (beta - 1.0) * special.trigamma(beta) - (tot - n) * special.trigamma(tot)


def log_pdf(theta, beta):
    beta = _check_beta(beta)
    theta = np.asarray(theta, dtype=np.float64)
    norm = special.log_gamma(beta.sum()) - np.sum(special.log_gamma(beta))
    return norm + np.sum((beta - 1.0) * np.log(theta), axis=-1)


def score(theta, beta, log_theta=None):
    """d/dbeta log Dir(theta | beta): the score-function estimator's weight.

    Pass ``log_theta`` from ``sample_log`` when samples may have been clamped;
    log of a clamped theta biases the estimate for beta well below 1.
    """
    beta = _check_beta(beta)
    if log_theta is None:
        log_theta = np.log(np.asarray(theta, dtype=np.float64))
    return special.digamma(beta.sum()) - special.digamma(beta) + log_theta


def laplace_params(beta) -> LaplaceParams:
    beta = _check_beta(beta)
    n = beta.shape[-1]
    logb = np.log(beta)
    mu = logb - logb.mean()
    sigma = (1.0 / beta) * (1.0 - 2.0 / n) + np.sum(1.0 / beta) / n**2
    return LaplaceParams(mu=mu, sigma_diag=sigma)


def laplace_sample(params: LaplaceParams, rng: np.random.Generator, n: int):
    """Logit draws h ~ N(mu, diag(sigma)); softmax(h) approximates Dir(beta)."""
    z = rng.standard_normal((n,) + params.mu.shape)
    return params.mu + np.sqrt(params.sigma_diag) * z


def sigma_lower_bound(delta: float, n_ops: int) -> float:
    """Lower bound on every Laplace variance when ||beta - 1||_2 <= delta."""
    if n_ops < 2:
        raise DomainError("need at least two operations")
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    if np.isinf(delta):
        return 0.0
    return (1.0 / (1.0 + delta)) * (1.0 - 2.0 / n_ops) + (1.0 / n_ops) * (1.0 / (1.0 + delta))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)
