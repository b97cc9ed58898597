"""Exact Gaussian likelihoods for windowed ARMAX and VARMA fits.

Mean parameters (intercept, feature loadings, gap dummies) enter linearly, so
for fixed dynamics they are profiled out by generalized least squares from an
augmented filter pass; the quasi-Newton search only sees the transformed
dynamic parameters (and, for the vector model, the innovation covariance
factor). AR and MA coefficients are reached through partial-autocorrelation
maps, which cover the whole stationary and invertible region.

Univariate model, with ``z`` the differenced price and ``c`` the regression
part::

    z_t = c_t + sum_i ar_i z_{t-i} + e_t + sum_j ma_j e_{t-j}

State: ``(z_t .. z_{t-P+1}, e_t .. e_{t-q+1})`` with ``P = max(p, 1)``.

Vector model, with dummies acting on the first coordinate only::

    S_t = c + d_t + A S_{t-1} + e_t + M e_{t-1}

``S`` is observed exactly, so the filter only carries the shock estimate and
its error covariance. The gain sequence does not depend on the data and the
VAR case (``M = 0``) needs no recursion at all.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_discrete_lyapunov
from scipy.optimize import minimize
from statsmodels.tsa.statespace.tools import (
    constrain_stationary_multivariate,
    constrain_stationary_univariate,
    unconstrain_stationary_multivariate,
)

from . import config as _cfg

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2 * np.pi))
_RSS_FLOOR = 1e-300
# Central-difference step, relative to max(1, |theta|).
_FD_STEP = float(np.finfo(float).eps ** (1.0 / 3.0))
# Starting coefficient matrices are shrunk inside this spectral radius.
_START_RADIUS = 0.95

_NUMERIC_ERRORS = (LinAlgError, np.linalg.LinAlgError, ValueError, FloatingPointError, ZeroDivisionError)

__all__ = [
    "ArmaxFit",
    "VarmaFit",
    "estimate_armax",
    "estimate_varma",
    "arma_system",
    "varma_coefficients",
]


def _stationary(u: np.ndarray) -> np.ndarray:
    """Stationary AR coefficients for unconstrained *u* (empty stays empty)."""
    return constrain_stationary_univariate(np.asarray(u, dtype=float)) if np.size(u) else np.zeros(0)


# ---------------------------------------------------------------------------
# Univariate ARMAX
# ---------------------------------------------------------------------------


def arma_system(ar: np.ndarray, ma: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Transition matrix, shock loading and AR block size for the ARMA state."""
    p, q = ar.size, ma.size
    lags = max(p, 1)
    s = lags + q
    T = np.zeros((s, s))
    T[0, :p] = ar
    T[0, lags : lags + q] = ma
    for i in range(1, lags):
        T[i, i - 1] = 1.0
    for j in range(1, q):
        T[lags + j, lags + j - 1] = 1.0
    R = np.zeros(s)
    R[0] = 1.0
    if q:
        R[lags] = 1.0
    return T, R, lags


@dataclass(slots=True)
class _ArmaxPass:
    v: np.ndarray  # innovations at b = 0
    Z: np.ndarray  # innovation loadings on b
    F: np.ndarray  # innovation variances (unit shock variance)
    a: np.ndarray  # filtered state at the last time, b = 0
    A: np.ndarray  # filtered state loadings on b


def _armax_pass(z: np.ndarray, X: np.ndarray, scaled: np.ndarray, ar: np.ndarray, ma: np.ndarray) -> _ArmaxPass:
    T, R, lags = arma_system(ar, ma)
    s = T.shape[0]
    m, k = X.shape
    Q = np.outer(R, R)
    Pm = solve_discrete_lyapunov(T, Q)

    persistence = 1.0 - float(ar.sum())
    a = np.zeros(s)
    A = np.zeros((s, k))
    A[:lags] = np.where(scaled, X[0] / persistence, 0.0)
    A[0] = np.where(scaled, X[0] / persistence, X[0])

    v = np.empty(m)
    Z = np.empty((m, k))
    F = np.empty(m)
    for tau in range(m):
        f = Pm[0, 0]
        K = Pm[:, 0] / f
        v[tau] = z[tau] - a[0]
        Z[tau] = A[0]
        F[tau] = f
        a = a + K * v[tau]
        A = A - np.outer(K, A[0])
        Pm = Pm - np.outer(K, Pm[0])
        if tau + 1 < m:
            a = T @ a
            A = T @ A
            A[0] += X[tau + 1]
            Pm = T @ Pm @ T.T + Q
    return _ArmaxPass(v=v, Z=Z, F=F, a=a, A=A)


def _gls(Z: np.ndarray, v: np.ndarray, w: np.ndarray, ridge: np.ndarray) -> tuple[np.ndarray, float]:
    Zw = Z * w[:, None]
    M = Zw.T @ Z + np.diag(ridge)
    coef = np.linalg.solve(M, Zw.T @ v) if Z.shape[1] else np.zeros(0)
    resid = v - Z @ coef
    return coef, float(resid @ (resid * w))


@dataclass(slots=True)
class ArmaxFit:
    ar: np.ndarray
    ma: np.ndarray
    coef: np.ndarray  # regression coefficients, in the column order of X
    sigma2: float
    log_likelihood: float
    converged: bool
    status: str
    eps: np.ndarray  # filtered shocks at the last time, most recent first
    z_pred: float  # one-step prediction of z given x_next
    iterations: int = 0


def estimate_armax(
    z: np.ndarray,
    X: np.ndarray,
    x_next: np.ndarray,
    p: int,
    q: int,
    *,
    ridge: np.ndarray | None = None,
    scaled: np.ndarray | None = None,
    gtol: float = _cfg.OPT_GTOL,
    maxiter: int = _cfg.OPT_MAXITER,
) -> ArmaxFit:
    """Exact MLE of an ARMAX(p, q) on ``z`` with regression design ``X``.

    *scaled* marks the columns whose effect on the initial state mean is
    divided by the AR persistence (intercept and features; dummies are not).
    *ridge* is added to the GLS normal matrix diagonal.
    """
    z = np.asarray(z, dtype=float)
    X = np.asarray(X, dtype=float)
    m, k = X.shape
    ridge = np.zeros(k) if ridge is None else np.asarray(ridge, dtype=float)
    scaled = np.ones(k, dtype=bool) if scaled is None else np.asarray(scaled, dtype=bool)

    def unpack(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _stationary(theta[:p]), -_stationary(theta[p:])

    def profile(theta: np.ndarray) -> tuple[float, _ArmaxPass, np.ndarray, float]:
        ar, ma = unpack(theta)
        run = _armax_pass(z, X, scaled, ar, ma)
        coef, rss = _gls(run.Z, run.v, 1.0 / run.F, ridge)
        objective = m * np.log(max(rss, _RSS_FLOOR) / m) + float(np.log(run.F).sum())
        return objective, run, coef, rss

    def objective(theta: np.ndarray) -> float:
        try:
            value = profile(theta)[0]
        except _NUMERIC_ERRORS:
            return np.inf
        return value if np.isfinite(value) else np.inf

    theta0 = np.zeros(p + q)
    status, converged, iterations = "ok", True, 0
    if p + q:
        res = minimize(objective, theta0, method="BFGS", options={"gtol": gtol, "maxiter": maxiter})
        theta, iterations = res.x, int(res.nit)
        if not np.isfinite(res.fun):
            status, converged = "failed", False
        elif res.status not in (0, 2):
            status, converged = "nonconverged", False
    else:
        theta = theta0

    try:
        _, run, coef, rss = profile(theta)
    except _NUMERIC_ERRORS as exc:
        logger.debug("ARMAX(%d,%d) final pass failed: %s", p, q, exc)
        return ArmaxFit(
            np.full(p, np.nan),
            np.full(q, np.nan),
            np.full(k, np.nan),
            np.nan,
            np.nan,
            False,
            "failed",
            np.full(q, np.nan),
            np.nan,
            iterations,
        )

    ar, ma = unpack(theta)
    sigma2 = rss / m
    loglik = -0.5 * (m * (_LOG_2PI + np.log(max(sigma2, _RSS_FLOOR)) + 1.0) + float(np.log(run.F).sum()))
    state = run.a + run.A @ coef
    T, _, lags = arma_system(ar, ma)
    z_pred = float((T @ state)[0] + np.asarray(x_next, dtype=float) @ coef)
    eps = state[lags : lags + q].copy()
    if not np.isfinite(z_pred):
        status, converged = "failed", False
    return ArmaxFit(ar, ma, coef, sigma2, float(loglik), converged, status, eps, z_pred, iterations)


# ---------------------------------------------------------------------------
# VARMA(1, q)
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class VarmaFit:
    ar: np.ndarray  # (n, n)
    ma: np.ndarray  # (n, n), zeros when q = 0
    mu: np.ndarray  # (n,)
    dummies: np.ndarray  # coefficients on the first coordinate
    cov: np.ndarray  # innovation covariance
    log_likelihood: float
    converged: bool
    status: str
    eps: np.ndarray  # filtered shock vector at the last time
    s_pred: np.ndarray  # one-step prediction of the stacked vector
    iterations: int = 0


def _chol_from(params: np.ndarray, n: int) -> np.ndarray:
    L = np.zeros((n, n))
    L[np.tril_indices(n)] = params
    L[np.diag_indices(n)] = np.exp(np.diag(L))
    return L


def _chol_params(cov: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    L = L.copy()
    L[np.diag_indices(L.shape[0])] = np.log(np.diag(L))
    return L[np.tril_indices(L.shape[0])]


def varma_coefficients(theta: np.ndarray, n: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(A, M, cov)`` for an unconstrained parameter vector.

    Layout: ``n*n`` AR values, ``n*n`` MA values when ``q = 1``, then the
    log-diagonal Cholesky factor of the innovation covariance. Any real vector
    maps to a stationary ``A``, an invertible ``M`` and a positive definite
    covariance.
    """
    theta = np.asarray(theta, dtype=float)
    n_ar = n * n
    n_ma = n_ar if q else 0
    L = _chol_from(theta[n_ar + n_ma :], n)
    cov = L @ L.T
    ar = np.asarray(constrain_stationary_multivariate(theta[:n_ar].reshape(n, n), cov)[0], dtype=float)
    if q:
        ma = np.asarray(constrain_stationary_multivariate(theta[n_ar : n_ar + n_ma].reshape(n, n), cov)[0], dtype=float)
    else:
        ma = np.zeros((n, n))
    return ar.reshape(n, n), ma.reshape(n, n), cov


def _stationary_cov(ar: np.ndarray, ma: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Unconditional covariance of ``S`` for a batch of VARMA(1, 1) parameters."""
    b, n, _ = ar.shape
    cross = ar @ cov @ ma.transpose(0, 2, 1)
    rhs = cov + ma @ cov @ ma.transpose(0, 2, 1) + cross + cross.transpose(0, 2, 1)
    kron = np.einsum("bij,bkl->bikjl", ar, ar).reshape(b, n * n, n * n)
    gamma = np.linalg.solve(np.eye(n * n) - kron, rhs.reshape(b, n * n, 1)).reshape(b, n, n)
    return 0.5 * (gamma + gamma.transpose(0, 2, 1))


@dataclass(slots=True)
class _VarmaPass:
    nll: np.ndarray  # (batch,)
    coef: np.ndarray  # (batch, n + dummies): intercept vector, then dummy coefficients
    eps: np.ndarray  # (batch, n) filtered shocks at the last time


def _varma_pass(S: np.ndarray, D: np.ndarray, ar: np.ndarray, ma: np.ndarray, cov: np.ndarray, q: int) -> _VarmaPass:
    """Profiled negative log-likelihood for a batch of ``(A, M, cov)``."""
    b = ar.shape[0]
    m, n = S.shape
    k = n + D.shape[1]
    eye = np.eye(n)

    X = np.zeros((m, n, k))
    X[:, :, :n] = eye
    X[:, 0, n:] = D
    y = np.empty((b, m, n))
    y[:, 0] = S[0]
    y[:, 1:] = S[1:] - S[:-1] @ ar.transpose(0, 2, 1)

    # first observation: stationary mean and covariance
    z0 = np.broadcast_to(X[0], (b, n, k)).copy()
    z0[:, :, :n] = np.linalg.inv(eye - ar)
    gamma = _stationary_cov(ar, ma, cov)
    sign, logdet = np.linalg.slogdet(gamma)
    g_inv = np.linalg.inv(gamma)
    v0 = y[:, 0]
    fv = (g_inv @ v0[..., None])[..., 0]
    vv = np.sum(v0 * fv, axis=1)
    r = (z0.transpose(0, 2, 1) @ fv[..., None])[..., 0]
    info = z0.transpose(0, 2, 1) @ g_inv @ z0

    if q == 0:
        c_inv = np.linalg.inv(cov)
        logdet = logdet + (m - 1) * np.linalg.slogdet(cov)[1]
        rest = y[:, 1:]
        w = rest @ c_inv
        vv = vv + np.sum(w * rest, axis=(1, 2))
        r = r + np.einsum("tnk,btn->bk", X[1:], w)
        info = info + np.einsum("tnk,btnj->bkj", X[1:], c_inv[:, None] @ X[None, 1:])
        eps_level = np.zeros((b, n))
        eps_load = np.zeros((b, n, k))
    else:
        ma_t = ma.transpose(0, 2, 1)
        gain = cov @ g_inv
        eps_level = (gain @ v0[..., None])[..., 0]
        eps_load = gain @ z0
        pe = cov - gain @ cov
        for t in range(1, m):
            f = cov + ma @ pe @ ma_t
            f_inv = np.linalg.inv(f)
            logdet = logdet + np.linalg.slogdet(f)[1]
            v0 = y[:, t] - (ma @ eps_level[..., None])[..., 0]
            zv = X[t] - ma @ eps_load
            zt = zv.transpose(0, 2, 1)
            fv = (f_inv @ v0[..., None])[..., 0]
            vv = vv + np.sum(v0 * fv, axis=1)
            r = r + (zt @ fv[..., None])[..., 0]
            info = info + zt @ f_inv @ zv
            gain = cov @ f_inv
            eps_level = (gain @ v0[..., None])[..., 0]
            eps_load = gain @ zv
            pe = cov - gain @ cov

    coef = np.linalg.solve(info, r[..., None])[..., 0]
    quad = vv - np.sum(r * coef, axis=1)
    nll = 0.5 * (m * n * _LOG_2PI + logdet + quad)
    nll = np.where(sign > 0, nll, np.inf)
    eps = eps_level - (eps_load @ coef[..., None])[..., 0]
    return _VarmaPass(nll=nll, coef=coef, eps=eps)


def _equationwise_ols(Y: np.ndarray, C: np.ndarray, Dd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares per equation; ``Dd`` only enters the first one. Returns coefficients on ``C`` and residuals."""
    n = Y.shape[1]
    coef = np.empty((n, C.shape[1]))
    resid = np.empty_like(Y)
    for i in range(n):
        design = np.column_stack([C, Dd]) if i == 0 and Dd.shape[1] else C
        beta = np.linalg.lstsq(design, Y[:, i], rcond=None)[0]
        coef[i] = beta[: C.shape[1]]
        resid[:, i] = Y[:, i] - design @ beta
    return coef, resid


def _shrink(mat: np.ndarray) -> np.ndarray:
    radius = float(np.max(np.abs(np.linalg.eigvals(mat)))) if mat.size else 0.0
    return mat * (_START_RADIUS / radius) if radius > _START_RADIUS else mat


def _varma_start(S: np.ndarray, D: np.ndarray, q: int) -> np.ndarray:
    """Two-stage least-squares starting point, mapped to the unconstrained parameters."""
    m, n = S.shape
    ones = np.ones((m - 1, 1))
    coef, resid = _equationwise_ols(S[1:], np.hstack([ones, S[:-1]]), D[1:])
    ar, ma = coef[:, 1:], np.zeros((n, n))
    if q:
        # lagged first-stage residuals stand in for the MA shocks
        coef, resid = _equationwise_ols(S[2:], np.hstack([ones[1:], S[1:-1], resid[:-1]]), D[2:])
        ar, ma = coef[:, 1 : 1 + n], coef[:, 1 + n :]
    cov = resid.T @ resid / resid.shape[0]
    cov = cov + 1e-8 * max(float(np.trace(cov)) / n, 1e-12) * np.eye(n)
    ar, ma = _shrink(ar), _shrink(ma)

    chol = _chol_params(cov)
    try:
        u_ar = np.asarray(unconstrain_stationary_multivariate(ar, cov)[0], dtype=float).ravel()
        u_ma = np.asarray(unconstrain_stationary_multivariate(ma, cov)[0], dtype=float).ravel() if q else np.zeros(0)
    except _NUMERIC_ERRORS:
        u_ar, u_ma = np.zeros(n * n), np.zeros(n * n if q else 0)
    theta = np.r_[u_ar, u_ma, chol]
    if not np.all(np.isfinite(theta)):
        theta = np.r_[np.zeros(n * n * (1 + q)), chol]
    return theta


def estimate_varma(
    S: np.ndarray,
    D: np.ndarray,
    q: int,
    *,
    gtol: float = _cfg.OPT_GTOL,
    maxiter: int = _cfg.OPT_MAXITER,
) -> VarmaFit:
    """Exact MLE of a VARMA(1, q) on the stacked series ``S`` (rows are times).

    ``D`` holds dummy regressors that act on the first coordinate only; the
    intercept vector and dummy coefficients are profiled by GLS. Gradients are
    central differences, evaluated for all coordinates in one batched pass.
    """
    S = np.asarray(S, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    m, n = S.shape

    def batch_nll(thetas: np.ndarray) -> np.ndarray:
        size = thetas.shape[0]
        ars = np.zeros((size, n, n))
        mas = np.zeros((size, n, n))
        covs = np.broadcast_to(np.eye(n), (size, n, n)).copy()
        valid = np.ones(size, dtype=bool)
        for i, theta in enumerate(thetas):
            try:
                ars[i], mas[i], covs[i] = varma_coefficients(theta, n, q)
            except _NUMERIC_ERRORS:
                valid[i] = False
        for arr in (ars, mas, covs):
            valid &= np.isfinite(arr).all(axis=(1, 2))
        ars[~valid], mas[~valid] = 0.0, 0.0
        covs[~valid] = np.eye(n)
        try:
            with np.errstate(all="ignore"):
                values = _varma_pass(S, D, ars, mas, covs, q).nll
        except _NUMERIC_ERRORS:
            return np.full(size, np.inf)
        return np.where(valid & np.isfinite(values), values, np.inf)

    def value_and_grad(theta: np.ndarray) -> tuple[float, np.ndarray]:
        size = theta.size
        h = _FD_STEP * np.maximum(1.0, np.abs(theta))
        steps = np.diag(h)
        values = batch_nll(np.vstack([theta, theta + steps, theta - steps]))
        f = values[0]
        if not np.isfinite(f):
            return np.inf, np.zeros(size)
        up, down = values[1 : 1 + size], values[1 + size :]
        ok_up, ok_down = np.isfinite(up), np.isfinite(down)
        with np.errstate(invalid="ignore"):
            grad = np.where(ok_up & ok_down, (up - down) / (2 * h), 0.0)
            grad = np.where(ok_up & ~ok_down, (up - f) / h, grad)
            grad = np.where(~ok_up & ok_down, (f - down) / h, grad)
        return float(f), grad

    try:
        theta0 = _varma_start(S, D, q)
    except _NUMERIC_ERRORS as exc:
        logger.debug("VARMA(1,%d) starting values failed: %s", q, exc)
        return _failed_varma(n, D.shape[1], "failed")
    if not np.isfinite(batch_nll(theta0[None])[0]):
        theta0 = np.r_[np.zeros(n * n * (1 + q)), theta0[n * n * (1 + q) :]]

    res = minimize(value_and_grad, theta0, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": maxiter})
    status, converged = "ok", True
    if not np.isfinite(res.fun):
        return _failed_varma(n, D.shape[1], "failed", int(res.nit))
    if res.status not in (0, 2):
        status, converged = "nonconverged", False

    try:
        ar, ma, cov = varma_coefficients(res.x, n, q)
        eig = np.linalg.eigvalsh(cov)
        if eig.min() <= 1e-10 * max(eig.max(), 1e-300):
            logger.debug("VARMA(1,%d) innovation covariance not positive definite", q)
            return _failed_varma(n, D.shape[1], "failed", int(res.nit))
        run = _varma_pass(S, D, ar[None], ma[None], cov[None], q)
    except _NUMERIC_ERRORS as exc:
        logger.debug("VARMA(1,%d) final pass failed: %s", q, exc)
        return _failed_varma(n, D.shape[1], "failed", int(res.nit))

    coef, eps = run.coef[0], run.eps[0]
    mu, dummies = coef[:n], coef[n:]
    s_pred = mu + ar @ S[-1] + ma @ eps
    if not np.all(np.isfinite(s_pred)):
        return _failed_varma(n, D.shape[1], "failed", int(res.nit))
    return VarmaFit(ar, ma, mu, dummies, cov, -float(run.nll[0]), converged, status, eps, s_pred, int(res.nit))


def _failed_varma(n: int, j: int, status: str, iterations: int = 0) -> VarmaFit:
    nan_mat = np.full((n, n), np.nan)
    nan_vec = np.full(n, np.nan)
    return VarmaFit(
        nan_mat, nan_mat, nan_vec, np.full(j, np.nan), nan_mat, np.nan, False, status, nan_vec, nan_vec, iterations
    )
