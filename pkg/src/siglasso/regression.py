"""Layer-weighted L1-penalized least squares by coordinate descent.

Objective, per response column::

    (1 / 2M) ||y - b - X theta||^2 + C * sum_j |theta_j|

with an unpenalized intercept ``b``. Column 0 of a signature design is the constant
order-0 coefficient; it is absorbed by ``b`` and its coefficient stays at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .signature import layer_of_columns

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
DEFAULT_FOLDS = 5
DEFAULT_N_LAMBDAS = 100
DEFAULT_RATIO = 1e-3


@dataclass(frozen=True)
class PenaltyWeights:
    lambdas: np.ndarray

    @property
    def N(self):
        return len(self.lambdas) - 1

    def column_weights(self, d):
        return self.lambdas[layer_of_columns(d, self.N)]


def layer_weights(N):
    """Per-layer weights ``sqrt(k)/k!``; layer 0 gets 0 because it is the intercept."""
    if N < 0:
        raise ValueError("N must be nonnegative")
    lambdas = np.array([math.sqrt(k) / math.factorial(k) for k in range(N + 1)])
    return PenaltyWeights(lambdas)


def theoretical_penalty_constant(k, N, d, p, v_eps, delta_bar, M):
    """Theory-side weight ``C_k(δ̄) / (k! sqrt(M))`` with ``C_k(δ̄) = sqrt(v_eps log(2 p N d^k / δ̄))``.

    Reporting only; fitting cross-validates a single global strength instead.
    """
    if min(N, d, p, M) <= 0 or v_eps <= 0 or not 0 < delta_bar <= 1:
        raise ValueError("all arguments must be positive and delta_bar in (0, 1]")
    arg = 2.0 * p * N * d**k / delta_bar
    if arg <= 1.0:
        raise ValueError(f"log argument {arg:g} gives a nonpositive constant")
    return math.sqrt(v_eps * math.log(arg)) / (math.factorial(k) * math.sqrt(M))


def feature_noise_radius(v_xi, d, n_points, delta, c=1.0):
    """High-probability bound ``v_xi sqrt(d) + v_xi sqrt(log(#D / delta) / c)`` on feature noise norms."""
    if not 0 < delta < 1 or n_points < 1:
        raise ValueError("delta must lie in (0, 1) and n_points be positive")
    return v_xi * math.sqrt(d) + v_xi * math.sqrt(max(math.log(n_points / delta), 0.0) / c)


def rescale_design(X, column_weights):
    """Multiply column ``j`` by its layer weight; the constant column 0 is left alone."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(column_weights, dtype=float).copy()
    w[0] = 1.0
    return X * w


def soft_threshold(z, gamma):
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


@njit(cache=True, nogil=True)
def _cd_gram(G, diag, q, beta, C, tol, max_iter):
    """Cyclic coordinate descent on the covariance form.

    ``q`` holds the current gradient ``X^T r / M`` and is updated in place.
    Returns (sweeps, converged, last max change, kkt residual).
    """
    P = beta.shape[0]
    max_change = 0.0
    kkt = 0.0
    for it in range(max_iter):
        max_change = 0.0
        for j in range(P):
            if diag[j] <= 0.0:
                continue
            old = beta[j]
            z = q[j] + diag[j] * old
            if z > C:
                new = (z - C) / diag[j]
            elif z < -C:
                new = (z + C) / diag[j]
            else:
                new = 0.0
            if new != old:
                delta = new - old
                for l in range(P):
                    q[l] -= G[j, l] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            kkt = 0.0
            for j in range(P):
                if diag[j] <= 0.0:
                    continue
                if beta[j] > 0.0:
                    r = abs(q[j] - C)
                elif beta[j] < 0.0:
                    r = abs(q[j] + C)
                else:
                    r = abs(q[j]) - C
                if r > kkt:
                    kkt = r
            if kkt <= tol:
                return it + 1, True, max_change, kkt
    return max_iter, False, max_change, kkt


class _Problem:
    """Centered design and Gram matrix shared by every penalty value on a path."""

    def __init__(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise ValueError(f"incompatible shapes X{X.shape}, Y{Y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("design or response contains non-finite values")
        # column-major responses: every column is reduced with the same memory layout
        Y = np.asfortranarray(Y)
        self.M = X.shape[0]
        self.x_mean = X.mean(axis=0)
        self.y_mean = np.array([Y[:, r].mean() for r in range(Y.shape[1])])
        self.Xc = X - self.x_mean
        self.Yc = np.asfortranarray(Y - self.y_mean)
        self.G = np.ascontiguousarray(self.Xc.T @ self.Xc) / self.M
        diag = np.diag(self.G).copy()
        scale = (X**2).mean(axis=0)
        diag[diag <= 1e-20 * np.maximum(scale, 1e-300)] = 0.0
        self.diag = diag
        self.penalized = diag > 0.0
        # per column so a p-response fit is bit-identical to p single fits
        self.XtY = np.column_stack([self.Xc.T @ np.ascontiguousarray(self.Yc[:, r]) for r in range(Y.shape[1])]) / self.M

    @property
    def P(self):
        return self.Xc.shape[1]

    @property
    def p(self):
        return self.Yc.shape[1]

    def c_max(self):
        if not np.any(self.penalized):
            return 0.0
        return float(np.max(np.abs(self.XtY[self.penalized])))

    def solve(self, C, tol, max_iter, theta0=None):
        theta = np.zeros((self.P, self.p)) if theta0 is None else np.array(theta0, dtype=float)
        theta[~self.penalized] = 0.0
        sweeps, converged = [], []
        for r in range(self.p):
            beta = np.ascontiguousarray(theta[:, r])
            q = self.XtY[:, r] - self.G @ beta
            n, ok, _, _ = _cd_gram(self.G, self.diag, q, beta, float(C), float(tol), int(max_iter))
            theta[:, r] = beta
            sweeps.append(int(n))
            converged.append(bool(ok))
        intercept = np.array([self.y_mean[r] - self.x_mean @ np.ascontiguousarray(theta[:, r]) for r in range(self.p)])
        kkt = self.kkt_residual(theta, C)
        return LassoFit(theta, intercept, float(C), sweeps, all(converged), kkt)

    def kkt_residual(self, theta, C):
        grad = self.Xc.T @ (self.Yc - self.Xc @ theta) / self.M
        grad = grad[self.penalized]
        th = theta[self.penalized]
        res = np.where(th > 0, np.abs(grad - C), np.where(th < 0, np.abs(grad + C), np.abs(grad) - C))
        return float(max(res.max(initial=0.0), 0.0))


@dataclass
class LassoFit:
    theta: np.ndarray
    intercept: np.ndarray
    C: float
    sweeps: list = field(default_factory=list)
    converged: bool = True
    kkt_residual: float = 0.0

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.theta + self.intercept


def fit_lasso(X, Y, C, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, theta0=None):
    """Minimize the penalized least-squares objective for every response column independently.

    Columns are centered internally so the intercept has a closed form; the objective
    itself is unchanged (no per-column rescaling of the penalty).
    """
    if C < 0:
        raise ValueError("penalty strength must be nonnegative")
    return _Problem(X, Y).solve(C, tol, max_iter, theta0)


def objective(X, Y, theta, intercept, C, penalty_weights=None):
    """Value of ``(1/2M)||Y - b - X theta||_F^2 + C * sum_j w_j |theta_j|``."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    theta = np.asarray(theta, dtype=float).reshape(X.shape[1], -1)
    resid = Y - X @ theta - intercept
    w = np.ones(X.shape[1]) if penalty_weights is None else np.asarray(penalty_weights)
    return float(0.5 * np.sum(resid**2) / X.shape[0] + C * np.sum(w[:, None] * np.abs(theta)))


def proximal_lasso(X, Y, C, penalty_weights, tol=1e-12, max_iter=200_000):
    """Weighted-L1 least squares by accelerated proximal gradient (FISTA).

    Independent of the coordinate-descent path: penalizes ``C * w_j |theta_j|`` directly,
    intercept unpenalized and refit in closed form from centered data.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    M = X.shape[0]
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    w = np.asarray(penalty_weights, dtype=float)
    step = 1.0 / max(np.linalg.norm(Xc, 2) ** 2 / M, 1e-300)
    theta = np.zeros((X.shape[1], Y.shape[1]))
    z, t = theta.copy(), 1.0
    for _ in range(max_iter):
        grad = Xc.T @ (Xc @ z - Yc) / M
        u = z - step * grad
        new = np.sign(u) * np.maximum(np.abs(u) - step * C * w[:, None], 0.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = new + ((t - 1.0) / t_new) * (new - theta)
        change = np.max(np.abs(new - theta))
        theta, t = new, t_new
        if change < tol:
            break
    return theta, y_mean - x_mean @ theta


def lambda_path(X, Y, n_lambdas=DEFAULT_N_LAMBDAS, ratio=DEFAULT_RATIO):
    """Decreasing geometric grid from the smallest all-zero penalty down to ``ratio`` times it."""
    if n_lambdas < 2 or not 0 < ratio < 1:
        raise ValueError("need n_lambdas >= 2 and 0 < ratio < 1")
    c_max = _Problem(X, Y).c_max()
    if c_max <= 0.0:
        return [0.0]
    return list(c_max * np.geomspace(1.0, ratio, n_lambdas))


def fit_path(X, Y, path, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Warm-started fits along a decreasing penalty grid."""
    problem = _Problem(X, Y)
    fits, theta = [], None
    for C in path:
        fit = problem.solve(C, tol, max_iter, theta)
        theta = fit.theta
        fits.append(fit)
    return fits


def kfold_indices(M, folds, seed):
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if M < folds:
        raise ValueError(f"{M} rows cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(M)
    return np.array_split(perm, folds)


@dataclass
class CVResult:
    path: list
    errors: np.ndarray
    best_index: int

    @property
    def C(self):
        return self.path[self.best_index]

    @property
    def error(self):
        return float(self.errors[self.best_index])


def cross_validate(X, Y, folds=DEFAULT_FOLDS, path=None, seed=0, tol=DEFAULT_TOL,
                   max_iter=DEFAULT_MAX_ITER, splits=None):
    """K-fold CV of the penalty strength; ties go to the larger penalty."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if path is None:
        path = lambda_path(X, Y)
    if splits is None:
        splits = kfold_indices(X.shape[0], folds, seed)
    sq_err = np.zeros(len(path))
    for held in splits:
        if len(held) == 0:
            raise ValueError("empty fold")
        train = np.setdiff1d(np.arange(X.shape[0]), held)
        fits = fit_path(X[train], Y[train], path, tol, max_iter)
        for i, fit in enumerate(fits):
            sq_err[i] += np.sum((fit.predict(X[held]) - Y[held]) ** 2)
    errors = sq_err / Y.size
    best = int(np.flatnonzero(errors == errors.min())[0])
    return CVResult(list(path), errors, best)
