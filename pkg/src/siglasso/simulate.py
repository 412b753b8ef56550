"""Synthetic feature/target pairs linked by known dynamics, sampled on irregular grids."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .paths import IndividualRecord, PiecewiseLinearPath, SamplingGrid, TimeSeries

log = logging.getLogger(__name__)

SETTINGS = ("well_specified", "ill_specified", "ou", "tumor")
DENSE_POINTS = 1001
N_ANCHORS = 15
TUMOR_DEFAULTS = {"k1": 10.0, "k2": 0.5, "lambda0": 0.9, "lambda1": 0.7, "psi": 20.0}
TUMOR_INITIAL = (2.0, 0.0, 0.0, 0.0)


class SimulationError(RuntimeError):
    """Numerical failure of one of the generative solvers."""


def dense_grid(points=DENSE_POINTS):
    return np.linspace(0.0, 1.0, points)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_smooth_driver(dims, seed, grid=None):
    """``dims`` channels, each a natural cubic spline through 15 N(0, 1) values at even anchors.

    Returned as a piecewise-linear path through the spline's values on the dense grid;
    the time channel is not included.
    """
    grid = dense_grid() if grid is None else np.asarray(grid, dtype=float)
    rng = _rng(seed)
    anchors = np.linspace(0.0, 1.0, N_ANCHORS)
    knots = rng.standard_normal((N_ANCHORS, dims))
    spline = CubicSpline(anchors, knots, axis=0, bc_type="natural")
    return PiecewiseLinearPath(grid, spline(grid))


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def solve_cde(field, driver, y0, substeps=4):
    """Solve ``dy = field(y) dx`` along a piecewise-linear driver, one value per driver knot.

    On each linear piece the CDE is the ODE ``dy/ds = field(y) @ Δx`` for ``s`` in [0, 1];
    it is integrated with ``substeps`` RK4 steps. ``field`` maps a state of shape (p,)
    to a (p, d) matrix.
    """
    y = np.asarray(y0, dtype=float).reshape(-1).copy()
    out = np.empty((len(driver.knots), len(y)))
    out[0] = y
    h = 1.0 / substeps
    for j, dx in enumerate(driver.increments):
        if np.any(dx):
            def rhs(state, dx=dx):
                return field(state) @ dx

            for _ in range(substeps):
                y = _rk4_step(rhs, y, h)
            if not np.all(np.isfinite(y)):
                raise SimulationError(
                    f"non-finite CDE state at step {j} (t={driver.knots[j + 1]:g}); |dx|={np.linalg.norm(dx):g}"
                )
        out[j + 1] = y
    return out


def tanh_field(A, p):
    """Vector field ``y -> tanh(A y)`` reshaped to a (p, d) matrix; ``A`` has shape (p*d, p)."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0] // p

    def field(y):
        return np.tanh(A @ y).reshape(p, d)

    return field


def solve_cde_tanh(driver, A, y0, substeps=4):
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    return solve_cde(tanh_field(A, len(y0)), driver, y0, substeps)


def gen_brownian(sigma2, seed, grid=None):
    """One-dimensional Brownian path with variance ``sigma2 * t``, started at 0."""
    grid = dense_grid() if grid is None else np.asarray(grid, dtype=float)
    rng = _rng(seed)
    steps = rng.standard_normal(len(grid) - 1) * np.sqrt(sigma2 * np.diff(grid))
    return PiecewiseLinearPath(grid, np.concatenate([[0.0], np.cumsum(steps)]))


def solve_ou(driver, theta=3.0, mu=1.0, y0=0.0):
    """Euler-Maruyama for ``dy = theta (mu - y) dt + dx`` on the driver's knots."""
    t = driver.knots
    dx = driver.increments[:, 0]
    y = np.empty(len(t))
    y[0] = y0
    for j in range(len(t) - 1):
        y[j + 1] = y[j] + theta * (mu - y[j]) * (t[j + 1] - t[j]) + dx[j]
    return y


def _tumor_rhs(u, x, k1, k2, lambda0, lambda1, psi):
    y = u.sum()
    # (lambda0 u1 [1 + (lambda0 y / lambda1)^psi])^(-1/psi) in log space; psi=20 overflows otherwise
    log_ratio = psi * np.log(lambda0 * y / lambda1)
    log_base = np.log(lambda0 * u[0]) + np.logaddexp(0.0, log_ratio)
    growth = np.exp(-log_base / psi)
    transfer = k2 * x * u[0]
    return np.array([
        growth - transfer,
        transfer - k1 * u[1],
        k1 * (u[1] - u[2]),
        k1 * (u[2] - u[3]),
    ])


def solve_tumor(driver, params=None, initial=TUMOR_INITIAL, steps_per_interval=1):
    """Fixed-step RK4 for the four-compartment tumor model; returns the compartments.

    ``driver`` is the drug concentration (nonnegative, one channel). The tumor weight
    is the row sum of the returned array.
    """
    params = {**TUMOR_DEFAULTS, **(params or {})}
    t = driver.knots
    conc = driver.knot_values[:, 0]
    if np.any(conc < 0):
        raise SimulationError("drug concentration must be nonnegative")
    u = np.asarray(initial, dtype=float).copy()
    out = np.empty((len(t), 4))
    out[0] = u
    for j in range(len(t) - 1):
        h = (t[j + 1] - t[j]) / steps_per_interval
        for s in range(steps_per_interval):
            t0 = t[j] + s * h

            def x_at(tt):
                return conc[j] + (conc[j + 1] - conc[j]) * (tt - t[j]) / (t[j + 1] - t[j])

            k1 = _tumor_rhs(u, x_at(t0), **params)
            k2 = _tumor_rhs(u + 0.5 * h * k1, x_at(t0 + 0.5 * h), **params)
            k3 = _tumor_rhs(u + 0.5 * h * k2, x_at(t0 + 0.5 * h), **params)
            k4 = _tumor_rhs(u + h * k3, x_at(t0 + h), **params)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u)) or u[0] <= 0 or np.any(u[1:] < -1e-8):
            raise SimulationError(f"tumor state {u.tolist()} invalid at t={t[j + 1]:g}")
        out[j + 1] = u
    return out


def gen_ill_specified(driver_values, lags=10):
    """``y_j = log ||sum_{h=1..lags} x_{j-h}||`` with lags counted in dense-grid steps.

    Entries before index ``lags`` and those with a zero sum are NaN.
    """
    x = np.asarray(driver_values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if lags >= len(x):
        raise ValueError(f"{lags} lags leave no admissible index on a grid of {len(x)} points")
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    y = np.full(len(x), np.nan)
    idx = np.arange(lags, len(x))
    sums = csum[idx] - csum[idx - lags]
    norms = np.linalg.norm(sums, axis=1)
    ok = norms > 0
    if not np.all(ok):
        log.warning("skipping %d indices where the lagged sum vanishes", int(np.sum(~ok)))
    y[idx[ok]] = np.log(norms[ok])
    return y


def add_noise(ts, variance, seed):
    """Add i.i.d. N(0, variance) noise to every value; timestamps are untouched."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    if variance == 0:
        return ts
    rng = _rng(seed)
    return TimeSeries(ts.grid, ts.values + rng.normal(0.0, np.sqrt(variance), ts.values.shape))


def _draw_count(rng, spec):
    lo, hi = (spec, spec) if np.isscalar(spec) else spec
    return int(rng.integers(int(lo), int(hi) + 1))


def random_downsample(grid, feature_values, target_values, k_range, m_range, seed,
                      target_admissible=None):
    """Irregular per-individual grids drawn from the dense grid.

    Feature grid: time 0 plus ``k - 1`` uniform draws (sorted, duplicates merged).
    Target grid: ``m`` feature times other than 0, always including the last one.
    ``target_admissible`` masks dense indices where a target may be observed.
    """
    rng = _rng(seed)
    grid = np.asarray(grid, dtype=float)
    n = len(grid)
    admissible = np.ones(n, bool) if target_admissible is None else np.asarray(target_admissible)
    k = _draw_count(rng, k_range)
    m = _draw_count(rng, m_range)
    if k < 2 or m < 1 or m > k:
        raise ValueError(f"infeasible sample counts k={k}, m={m}")
    candidates = np.arange(1, n)
    for _ in range(100):
        idx = np.unique(rng.choice(candidates, size=k - 1, replace=True))
        feat_idx = np.concatenate([[0], idx])
        ok_targets = feat_idx[admissible[feat_idx] & (feat_idx > 0)]
        if len(ok_targets) and admissible[feat_idx[-1]]:
            break
    else:
        raise ValueError("could not draw a grid with an admissible final time")
    last = feat_idx[-1]
    others = ok_targets[ok_targets != last]
    m_eff = min(m, len(others) + 1)
    chosen = rng.choice(others, size=m_eff - 1, replace=False) if m_eff > 1 else np.array([], int)
    tgt_idx = np.sort(np.concatenate([chosen, [last]])).astype(int)
    fv = np.asarray(feature_values)[feat_idx]
    tv = np.asarray(target_values)
    tv = tv[:, None] if tv.ndim == 1 else tv
    features = TimeSeries(SamplingGrid(grid[feat_idx]), fv)
    targets = TimeSeries(SamplingGrid(grid[tgt_idx]), tv[tgt_idx])
    return IndividualRecord(features, targets)


@dataclass
class SimulationConfig:
    setting: str = "well_specified"
    n: int = 50
    dense_points: int = DENSE_POINTS
    feature_samples: tuple = (30, 60)
    target_samples: tuple = (5, 5)
    noise_x: float = 0.0
    noise_y: float = 0.0
    seed: int = 0
    dims: int = 2
    p: int = 1
    y0: float = 1.0
    ou_theta: float = 3.0
    ou_mu: float = 1.0
    ou_sigma2: float = 0.1
    ou_y0: float = 0.0
    tumor: dict = field(default_factory=lambda: dict(TUMOR_DEFAULTS))
    tumor_initial: tuple = TUMOR_INITIAL
    lags: int = 10
    downsample: bool = True
    system_seed: int | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}; choose from {SETTINGS}")
        if self.n < 1 or self.dense_points < 2:
            raise ValueError("n and dense_points must be positive")
        if self.noise_x < 0 or self.noise_y < 0:
            raise ValueError("noise variances must be nonnegative")
        self.feature_samples = _as_range(self.feature_samples)
        self.target_samples = _as_range(self.target_samples)
        self.tumor_initial = tuple(self.tumor_initial)

    def to_dict(self):
        out = asdict(self)
        out["feature_samples"] = list(self.feature_samples)
        out["target_samples"] = list(self.target_samples)
        out["tumor_initial"] = list(self.tumor_initial)
        return out


def _as_range(spec):
    if np.isscalar(spec):
        return (int(spec), int(spec))
    lo, hi = spec
    if lo > hi or lo < 1:
        raise ValueError(f"bad sample-count range {spec}")
    return (int(lo), int(hi))


@dataclass
class GeneratedSample:
    grid: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    record: IndividualRecord


def _dense_pair(config, rng, A):
    """Dense feature channels (time excluded) and target values for one individual."""
    grid = dense_grid(config.dense_points)
    if config.setting == "well_specified":
        drv = gen_smooth_driver(config.dims, rng, grid)
        aug = PiecewiseLinearPath(grid, np.column_stack([grid, drv.knot_values]))
        y = solve_cde_tanh(aug, A, np.full(config.p, config.y0))
        return drv.knot_values, y
    if config.setting == "ill_specified":
        drv = gen_smooth_driver(config.dims, rng, grid)
        return drv.knot_values, gen_ill_specified(drv.knot_values, config.lags)[:, None]
    if config.setting == "ou":
        drv = gen_brownian(config.ou_sigma2, rng, grid)
        y = solve_ou(drv, config.ou_theta, config.ou_mu, config.ou_y0)
        return drv.knot_values, y[:, None]
    drv = gen_smooth_driver(1, rng, grid)
    conc = PiecewiseLinearPath(grid, drv.knot_values**2)
    u = solve_tumor(conc, config.tumor, config.tumor_initial)
    return conc.knot_values, u.sum(axis=1)[:, None]


def setting_matrix(config):
    """The random CDE matrix of the well-specified setting, shared by all individuals.

    Drawn from ``system_seed`` (``seed`` when unset) so a test set can share the dynamics.
    """
    if config.setting != "well_specified":
        return None
    system_seed = config.seed if config.system_seed is None else config.system_seed
    rng = np.random.default_rng([system_seed, 0])
    d = config.dims + 1
    return rng.standard_normal((config.p * d, config.p))


def simulate(config):
    """Generate every individual of ``config``; a pure function of the config and its seed."""
    A = setting_matrix(config)
    children = np.random.SeedSequence(config.seed).spawn(config.n)
    samples = []
    for i, child in enumerate(children):
        gen_rng, noise_rng, sample_rng = (np.random.default_rng(s) for s in child.spawn(3))
        feats, targs = _dense_pair(config, gen_rng, A)
        grid = dense_grid(config.dense_points)
        admissible = np.all(np.isfinite(targs), axis=1)
        if config.downsample:
            rec = random_downsample(grid, feats, targs, config.feature_samples,
                                    config.target_samples, sample_rng, admissible)
        else:
            tgt = np.flatnonzero(admissible & (np.arange(len(grid)) > 0))
            rec = IndividualRecord(TimeSeries(SamplingGrid(grid), feats),
                                   TimeSeries(SamplingGrid(grid[tgt]), targs[tgt]))
        noisy_f = add_noise(rec.features, config.noise_x, noise_rng)
        noisy_t = add_noise(rec.targets, config.noise_y, noise_rng)
        rec = IndividualRecord(noisy_f, noisy_t, id=f"{config.setting}-{config.seed}-{i}")
        samples.append(GeneratedSample(grid, feats, targs, rec))
    return samples
