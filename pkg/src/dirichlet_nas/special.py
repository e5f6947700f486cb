"""Scalar special functions and samplers, vectorized over numpy arrays.

All functions accept python scalars or arrays (broadcast together) and
return a python float when every input is scalar.
"""
from __future__ import annotations

import numba
import numpy as np

from .errors import DomainError, NumericError

EULER_GAMMA = 0.57721566490153286061

# Lanczos coefficients, g = 671/128, 14 terms.
_LANCZOS_G = 5.24218750000000000
_LANCZOS = np.array([
    57.1562356658629235, -59.5979603554754912, 14.1360979747417471,
    -0.491913816097620199, 0.339946499848118887e-4, 0.465236289270485756e-4,
    -0.983744753048795646e-4, 0.158088703224912494e-3, -0.210264441724104883e-3,
    0.217439618115212643e-3, -0.164318106536763890e-3, 0.844182239838527433e-4,
    -0.261908384015814087e-4, 0.368991826595316234e-5,
])

CF_MAX_ITER = 300
CF_TOL = 1e-14
_FPMIN = 1e-300


def _out(value, scalar):
    return float(value) if scalar else value


def _positive(name, x):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    scalar = np.ndim(x) == 0
    x = _positive("x", x)
    tmp = x + _LANCZOS_G
    tmp = (x + 0.5) * np.log(tmp) - tmp
    ser = np.full_like(x, 0.999999999999997092)
    y = x.copy()
    for c in _LANCZOS:
        y = y + 1.0
        ser = ser + c / y
    return _out(tmp + np.log(2.5066282746310005 * ser / x), scalar)


def _shift_up(x, threshold):
    # recurrence psi(x) = psi(x+1) - 1/x applied until x >= threshold
    acc = np.zeros_like(x)
    x = x.copy()
    while True:
        small = x < threshold
        if not small.any():
            return x, acc
        acc = np.where(small, acc + 1.0 / np.where(small, x, 1.0), acc)
        x = np.where(small, x + 1.0, x)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    scalar = np.ndim(x) == 0
    x = _positive("x", x)
    x, acc = _shift_up(x, 10.0)
    inv2 = 1.0 / (x * x)
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (
        1.0 / 240 - inv2 * (1.0 / 132 - inv2 * 691.0 / 32760)))))
    return _out(np.log(x) - 0.5 / x - series - acc, scalar)


def trigamma(x):
    """psi'(x) for x > 0."""
    scalar = np.ndim(x) == 0
    x = _positive("x", x)
    acc = np.zeros_like(x)
    x = x.copy()
    while True:
        small = x < 10.0
        if not small.any():
            break
        xs = np.where(small, x, 1.0)
        acc = np.where(small, acc + 1.0 / (xs * xs), acc)
        x = np.where(small, x + 1.0, x)
    inv = 1.0 / x
    inv2 = inv * inv
    # B2k / x^(2k+1) terms
    series = inv + 0.5 * inv2 + inv * inv2 * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (
        1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66 - inv2 * 691.0 / 2730)))))
    return _out(series + acc, scalar)


@numba.vectorize(["float64(float64, float64, float64)"], cache=True)
def _betacf_kernel(x, a, b):
    # modified Lentz; NaN signals non-convergence
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    return np.nan


def _betacf(x, a, b):
    h = _betacf_kernel(x, a, b)
    if np.any(np.isnan(h)):
        raise NumericError(f"incomplete beta continued fraction did not converge in {CF_MAX_ITER} iterations")
    return h


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta I_x(a, b)."""
    scalar = np.ndim(x) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0
    a = _positive("a", a)
    b = _positive("b", b)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    x, a, b = np.broadcast_arrays(x, a, b)
    out = np.where(x >= 1.0, 1.0, 0.0)
    interior = (x > 0) & (x < 1)
    if interior.any():
        xi, ai, bi = x[interior], a[interior], b[interior]
        lbeta = log_gamma(ai + bi) - log_gamma(ai) - log_gamma(bi)
        front = np.exp(lbeta + ai * np.log(xi) + bi * np.log1p(-xi))
        flip = xi > (ai + 1.0) / (ai + bi + 2.0)
        # evaluate the fraction on the side where it converges quickly
        xs = np.where(flip, 1.0 - xi, xi)
        as_ = np.where(flip, bi, ai)
        bs = np.where(flip, ai, bi)
        val = front * _betacf(xs, as_, bs) / as_
        out = out.astype(np.float64)
        out[interior] = np.where(flip, 1.0 - val, val)
    return _out(np.clip(out, 0.0, 1.0), scalar)


def beta_log_pdf(x, a, b):
    """Log density of Beta(a, b) at interior x."""
    scalar = np.ndim(x) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0
    a = _positive("a", a)
    b = _positive("b", b)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any((x <= 0) | (x >= 1)):
        raise DomainError("x must lie strictly inside (0, 1)")
    lbeta = log_gamma(a) + log_gamma(b) - log_gamma(a + b)
    return _out((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - lbeta, scalar)


def fd_step(a):
    """Central-difference step used for derivatives in the first Beta shape."""
    a = np.asarray(a, dtype=np.float64)
    h = 1e-4 * np.maximum(1.0, a)
    # keep a - h inside the domain for tiny shapes
    return np.minimum(h, 0.5 * a)


def d_reg_inc_beta_da(x, a, b):
    """dI_x(a, b)/da by central finite difference, b held fixed."""
    scalar = np.ndim(x) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0
    a = _positive("a", a)
    h = fd_step(a)
    hi = reg_inc_beta(x, a + h, b)
    lo = reg_inc_beta(x, a - h, b)
    out = (np.asarray(hi) - np.asarray(lo)) / (2.0 * h)
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite incomplete beta derivative")
    return _out(out, scalar)


def log_gamma_sample(shape, rng: np.random.Generator, size=None):
    """log of Gamma(shape, 1) draws.

    Marsaglia-Tsang squeeze for shape >= 1; smaller shapes use the boost
    G(a) = G(a + 1) * U^(1/a), applied in log space so tiny shapes do not
    underflow.
    """
    shape = _positive("shape", shape)
    if size is None:
        size = shape.shape
    shape = np.broadcast_to(shape, size)
    boost = shape < 1.0
    alpha = np.where(boost, shape + 1.0, shape)
    d = alpha - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(size, dtype=np.float64)
    pending = np.ones(size, dtype=bool)
    while pending.any():
        idx = np.nonzero(pending)
        dd, cc = d[idx], c[idx]
        z = rng.standard_normal(dd.shape)
        u = 1.0 - rng.random(dd.shape)
        v = 1.0 + cc * z
        ok = v > 0
        v = np.where(ok, v, 1.0) ** 3
        z2 = z * z
        accept = ok & ((u < 1.0 - 0.0331 * z2 * z2)
                       | (np.log(u) < 0.5 * z2 + dd * (1.0 - v + np.log(v))))
        hit = tuple(i[accept] for i in idx)
        out[hit] = np.log(dd[accept]) + np.log(v[accept])
        pending[hit] = False
    if boost.any():
        u = 1.0 - rng.random(size)
        out = np.where(boost, out + np.log(u) / np.where(boost, shape, 1.0), out)
    return out


def gamma_sample(shape, rng: np.random.Generator, size=None):
    """Draw from Gamma(shape, 1)."""
    scalar = np.ndim(shape) == 0 and size is None
    return _out(np.exp(log_gamma_sample(shape, rng, size)), scalar)
