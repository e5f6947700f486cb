"""Curvature and exploration instruments.

All instruments work on objects exposing ``value(mu)`` and ``grad(mu)`` where
``mu`` is the flat vector of per-edge Laplace logits.  ``LossOverLogits`` wraps a
frozen super-network; ``Quadratic`` and ``Linear`` are synthetic stand-ins with
known derivatives.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import dirichlet as dr
from . import space as sp
from .errors import ContractError, DomainError, NumericError


class LossOverLogits:
    """Validation loss at Softmax(mu) per edge with weights, batch and masks frozen."""

    def __init__(self, net: sp.SuperNet, x, y, masks):
        self.net, self.x, self.y = net, np.asarray(x), np.asarray(y)
        self.masks = masks
        self.sizes = [len(ops) for ops in net.edge_ops]
        self.dim = int(sum(self.sizes))

    @classmethod
    def frozen(cls, net: sp.SuperNet, x, y, rng: np.random.Generator):
        return cls(net, x, y, sp.draw_masks(net, rng))

    def split(self, mu):
        mu = np.asarray(mu, dtype=np.float64)
        if mu.shape != (self.dim,):
            raise ContractError(f"mu has shape {mu.shape}, expected ({self.dim},)")
        return np.split(mu, np.cumsum(self.sizes)[:-1])

    def _thetas(self, mu):
        return [dr.softmax(m) for m in self.split(mu)]

    def value(self, mu) -> float:
        loss, _, _ = sp.supernet_forward(self.net, self.x, self.y, self._thetas(mu), self.masks)
        return loss

    def grad(self, mu):
        thetas = self._thetas(mu)
        _, _, cache = sp.supernet_forward(self.net, self.x, self.y, thetas, self.masks)
        _, g_thetas = sp.supernet_backward(self.net, cache)
        # softmax Jacobian-vector product: theta * (g - <g, theta>)
        return np.concatenate([t * (g - np.dot(g, t)) for t, g in zip(thetas, g_thetas)])


@dataclass
class Quadratic:
    """f(mu) = 1/2 (mu - c)^T A (mu - c) + s."""
    A: np.ndarray
    c: np.ndarray | None = None
    s: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.c = np.zeros(len(self.A)) if self.c is None else np.asarray(self.c, dtype=np.float64)

    @property
    def dim(self):
        return len(self.A)

    def value(self, mu):
        d = np.asarray(mu) - self.c
        return 0.5 * float(d @ self.A @ d) + self.s

    def grad(self, mu):
        return self.A @ (np.asarray(mu) - self.c)


@dataclass
class Linear:
    w: np.ndarray
    s: float = 0.0

    @property
    def dim(self):
        return len(self.w)

    def value(self, mu):
        return float(np.dot(self.w, mu)) + self.s

    def grad(self, mu):
        return np.asarray(self.w, dtype=np.float64).copy()


@dataclass
class Scaled:
    f: object
    c: float

    @property
    def dim(self):
        return self.f.dim

    def value(self, mu):
        return self.c * self.f.value(mu)

    def grad(self, mu):
        return self.c * self.f.grad(mu)


def hvp(f, mu, v, eps: float | None = None):
    """Hessian-vector product by central differences of exact gradients."""
    mu, v = np.asarray(mu, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nv = float(np.linalg.norm(v))
    if not nv > 0:
        raise DomainError("hvp direction must be non-zero")
    if eps is None:
        eps = 1e-3 * (1.0 + float(np.linalg.norm(mu)))
    u = v / nv
    out = (f.grad(mu + eps * u) - f.grad(mu - eps * u)) * nv / (2.0 * eps)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite Hessian-vector product")
    return out


@dataclass
class EigenResult:
    value: float      # |lambda|, largest magnitude
    signed: float     # Rayleigh quotient with sign
    converged: bool
    iters: int


def dominant_eigenvalue(f, mu, iters: int = 100, tol: float = 1e-6,
                        rng: np.random.Generator | None = None) -> EigenResult:
    """Power iteration on hvp; reports the largest-magnitude eigenvalue.

    Convergence is declared when the Rayleigh quotient changes by less than
    ``tol`` relative to its magnitude.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = np.asarray(mu, dtype=np.float64)
    v = rng.standard_normal(len(mu))
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, iters + 1):
        hv = hvp(f, mu, v)
        new = float(v @ hv)
        nh = float(np.linalg.norm(hv))
        if nh == 0.0:
            return EigenResult(0.0, 0.0, True, it)
        if it > 1 and abs(new - lam) < tol * max(1.0, abs(new)):
            return EigenResult(abs(new), new, True, it)
        lam = new
        v = hv / nh
    return EigenResult(abs(lam), lam, False, iters)


def hutchinson_samples(f, mu, probes: int = 64, rng: np.random.Generator | None = None):
    """Per-probe z^T H z with Rademacher z."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = np.asarray(mu, dtype=np.float64)
    out = np.empty(probes)
    for i in range(probes):
        z = rng.integers(0, 2, len(mu)) * 2.0 - 1.0
        out[i] = z @ hvp(f, mu, z)
    return out


def hessian_trace(f, mu, probes: int = 64, rng: np.random.Generator | None = None) -> float:
    return float(np.mean(hutchinson_samples(f, mu, probes, rng)))


def exact_trace(f, mu) -> float:
    """Sum of e_i^T H e_i; costs one hvp per dimension."""
    mu = np.asarray(mu, dtype=np.float64)
    eye = np.eye(len(mu))
    return float(sum(hvp(f, mu, e)[i] for i, e in enumerate(eye)))


def laplace_bound_check(betas, f, n_mc: int = 10_000, rng: np.random.Generator | None = None,
                        probes: int = 64) -> dict:
    """Compare E[f(mu + noise)] under the Laplace approximation with
    f(mu) + 1/2 * c * tr(H), c the covariance lower bound.

    ``betas`` is one concentration vector per edge (or a single vector).
    With several edges the smallest per-edge coefficient is used, which keeps
    the right-hand side a valid lower bound when H is PSD.  When the dimension
    is at most ``probes`` the trace is computed exactly from basis directions,
    which is both cheaper and free of probe noise.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if isinstance(betas, np.ndarray) and betas.ndim == 1:
        betas = [betas]
    betas = [np.asarray(b, dtype=np.float64) for b in betas]
    params = [dr.laplace_params(b) for b in betas]
    mu = np.concatenate([p.mu for p in params])
    if len(mu) != f.dim:
        raise ContractError(f"betas give dimension {len(mu)}, f expects {f.dim}")
    draws = np.concatenate([dr.laplace_sample(p, rng, n_mc) for p in params], axis=1)
    vals = np.array([f.value(d) for d in draws])
    lhs = float(vals.mean())
    lhs_se = float(vals.std(ddof=1) / math.sqrt(n_mc))
    deltas = [float(np.linalg.norm(b - 1.0)) for b in betas]
    coef = min(dr.sigma_lower_bound(d, len(b)) for d, b in zip(deltas, betas))
    tr = exact_trace(f, mu) if len(mu) <= probes else hessian_trace(f, mu, probes, rng)
    f_mu = f.value(mu)
    rhs = f_mu + 0.5 * coef * tr
    quot = []
    for _ in range(16):
        z = rng.standard_normal(len(mu))
        quot.append(float(z @ hvp(f, mu, z)) / float(z @ z))
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "f_mu": f_mu, "trace": tr, "coef": coef,
            "delta_used": max(deltas), "psd_proxy": min(quot),
            "holds": bool(lhs >= rhs - 3.0 * lhs_se)}


def _sample_genotype_keys(betas, spec: sp.CellSpec, n: int, rng, edge_ops=None):
    """Draw n architectures from the per-edge Dirichlets; returns choice rows."""
    edge_ops = edge_ops or [list(range(spec.n_ops))] * spec.n_edges
    cols = []
    for b, ops in zip(betas, edge_ops):
        th = dr.sample(b, rng, n)
        # argmax picks the first maximum, i.e. the lowest registry index on ties
        cols.append(np.asarray(ops)[np.argmax(th, axis=1)])
    return np.stack(cols, axis=1)


def _genotype(spec, row):
    return sp.Genotype(spec.name, spec.op_registry, tuple(int(c) for c in row))


def exploration_band(betas, spec: sp.CellSpec, scorer, n_samples: int = 100,
                     rng: np.random.Generator | None = None, edge_ops=None) -> dict:
    """Score ``n_samples`` genotypes drawn from Dir(beta) plus the mean architecture.

    ``scorer`` maps Genotype -> float; an OracleTable's ``__getitem__`` raises a
    contract error on a miss, which is propagated.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = _sample_genotype_keys(betas, spec, n_samples, rng, edge_ops)
    genos = [_genotype(spec, r) for r in rows]
    scores = [float(scorer(g)) for g in genos]
    mean_geno = sp.select_genotype(spec, betas, edge_ops)
    return {"min": min(scores), "max": max(scores), "mean": float(np.mean(scores)),
            "mean_arch_score": float(scorer(mean_geno)), "mean_arch": mean_geno.key(),
            "scores": scores, "genotypes": [g.key() for g in genos]}


def band_widths(betas, spec: sp.CellSpec, scorer, n_samples: int = 100, n_bands: int = 1000,
                rng: np.random.Generator | None = None, edge_ops=None) -> np.ndarray:
    """max - min score for each of ``n_bands`` independent bands."""
    rng = rng if rng is not None else np.random.default_rng(0)
    rows = _sample_genotype_keys(betas, spec, n_samples * n_bands, rng, edge_ops)
    cache: dict = {}
    scores = np.empty(len(rows))
    for i, r in enumerate(map(tuple, rows)):
        if r not in cache:
            cache[r] = float(scorer(_genotype(spec, r)))
        scores[i] = cache[r]
    scores = scores.reshape(n_bands, n_samples)
    return scores.max(axis=1) - scores.min(axis=1)


def state_logits_loss(state, dataset, batch_size: int | None = None, rng=None) -> LossOverLogits:
    """Frozen validation-loss-over-logits for a training state."""
    rng = rng if rng is not None else np.random.default_rng(0)
    n = batch_size or state.config.batch_size
    idx = dataset.arch_idx[:n]
    return LossOverLogits.frozen(state.net, dataset.features[idx], dataset.labels[idx], rng)


def state_mu(state):
    return np.concatenate([dr.laplace_params(b).mu for b in state.betas()])


CSV_FIELDS = ("epoch", "eigenvalue", "eig_converged", "trace", "band_min", "band_max", "band_mean",
              "mean_arch_score")


def write_csv(path, rows, fields=CSV_FIELDS):
    """Plot-ready CSV; missing fields are left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
