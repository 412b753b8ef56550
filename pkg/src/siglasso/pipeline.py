"""Learn-and-reconstruct: signature designs, SigLasso fitting and trajectory prediction."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .paths import (
    DegeneratePathError,
    IndividualRecord,
    PiecewiseLinearPath,
    SamplingGrid,
    TimeSeries,
    check_grid,
    cumulative_variation,
)
from .regression import (
    DEFAULT_FOLDS,
    DEFAULT_MAX_ITER,
    DEFAULT_N_LAMBDAS,
    DEFAULT_RATIO,
    DEFAULT_TOL,
    PenaltyWeights,
    cross_validate,
    fit_lasso,
    kfold_indices,
    lambda_path,
    layer_weights,
    rescale_design,
)
from .signature import (
    layer_of_columns,
    prefix_signatures,
    sig_dim,
    word_index,
    words,
)

log = logging.getLogger(__name__)

MAX_FIT_DEPTH = 9


@dataclass
class Dataset:
    individuals: list

    def __post_init__(self):
        if not self.individuals:
            raise ValueError("dataset has no individuals")
        d = {r.features.channels for r in self.individuals}
        p = {r.targets.channels for r in self.individuals}
        if len(d) != 1 or len(p) != 1:
            raise ValueError(f"inconsistent channel counts: features {d}, targets {p}")

    @property
    def d(self):
        return self.individuals[0].features.channels

    @property
    def p(self):
        return self.individuals[0].targets.channels

    @property
    def n(self):
        return len(self.individuals)

    @property
    def M(self):
        return sum(len(r.targets.times) for r in self.individuals)

    def __len__(self):
        return self.n

    def __iter__(self):
        return iter(self.individuals)


def feature_path(features, time_augment=True):
    values = features.values
    if time_augment:
        values = np.column_stack([features.times, values])
    return PiecewiseLinearPath(features.times, values)


def _prefix_variation(path, t_list):
    cum = cumulative_variation(path)
    lengths = np.diff(cum)
    out = np.empty(len(t_list))
    for i, t in enumerate(t_list):
        j = min(int(np.searchsorted(path.knots, t, side="right")) - 1, len(path.knots) - 1)
        out[i] = cum[j]
        if j < len(path.knots) - 1 and t > path.knots[j]:
            out[i] += lengths[j] * (t - path.knots[j]) / (path.knots[j + 1] - path.knots[j])
    return out


NORMALIZATIONS = ("prefix", "dataset", "none")


def normalization_mode(normalize):
    """Map the ``normalize`` argument (bool or mode name) onto a mode name."""
    if normalize is True:
        return "prefix"
    if normalize is False or normalize is None:
        return "none"
    if normalize not in NORMALIZATIONS:
        raise ValueError(f"normalize must be a bool or one of {NORMALIZATIONS}, got {normalize!r}")
    return normalize


def dataset_scale(ds, time_augment=True):
    """Largest total variation of any preprocessed feature path in ``ds``."""
    scale = max(cumulative_variation(feature_path(r.features, time_augment))[-1] for r in ds)
    if scale <= 0.0:
        raise DegeneratePathError("every feature path has zero total variation")
    return float(scale)


def signature_rows(features, t_list, N, time_augment=True, normalize=True, scale=1.0):
    """Flattened signatures of the preprocessed feature prefixes ending at each ``t``.

    Prefixes are time-augmented first and then rescaled, which is applied through the
    scaling law (layer ``k`` times ``s**-k``). With ``normalize="prefix"`` (or ``True``)
    ``s`` is each prefix's own total variation and rows of zero-variation prefixes are NaN;
    with ``"dataset"`` it is the fixed ``scale``; with ``"none"`` (or ``False``) it is 1.
    """
    mode = normalization_mode(normalize)
    path = feature_path(features, time_augment)
    t_list = np.asarray(t_list, dtype=float)
    order = np.argsort(t_list, kind="stable")
    sigs = prefix_signatures(path, N, t_list[order])
    d = path.channels
    layer = layer_of_columns(d, N)
    rows = np.empty((len(t_list), sig_dim(d, N)))
    if mode == "prefix":
        scales = _prefix_variation(path, t_list[order])
    else:
        scales = np.full(len(t_list), scale if mode == "dataset" else 1.0)
    for pos, sig, s in zip(order, sigs, scales):
        if s <= 0.0:
            rows[pos] = np.nan
        else:
            rows[pos] = sig.flat() * s ** (-layer.astype(float))
    return rows


@dataclass
class Design:
    X: np.ndarray
    Y: np.ndarray
    index: list
    d: int
    N: int
    skipped: int = 0


def build_design(ds, N, time_augment=True, normalize=True, scale=1.0):
    """Stack one signature row per (individual, target time), ordered by individual then time."""
    X_parts, Y_parts, index, skipped = [], [], [], 0
    for i, rec in enumerate(ds):
        check_grid(rec.features.grid)
        rows = signature_rows(rec.features, rec.targets.times, N, time_augment, normalize, scale)
        keep = np.all(np.isfinite(rows), axis=1)
        skipped += int(np.sum(~keep))
        X_parts.append(rows[keep])
        Y_parts.append(rec.targets.values[keep])
        index.extend((rec.id or str(i), float(t)) for t in rec.targets.times[keep])
    if skipped:
        log.warning("skipped %d target measurements with zero-variation prefixes", skipped)
    d = ds.d + (1 if time_augment else 0)
    X = np.vstack(X_parts) if X_parts else np.empty((0, sig_dim(d, N)))
    Y = np.vstack(Y_parts) if Y_parts else np.empty((0, ds.p))
    if X.shape[0] == 0:
        raise ValueError("no usable target measurements")
    return Design(X, Y, index, d, N, skipped)


def inverse_layer_weights(weights, d):
    """Column multipliers ``1/lambda_k`` turning the layer-weighted penalty into a plain L1 one."""
    w = weights.column_weights(d)
    inv = np.zeros_like(w)
    inv[w > 0] = 1.0 / w[w > 0]
    inv[0] = 1.0
    return inv


@dataclass
class SigLassoModel:
    N: int
    d: int
    p: int
    weights: PenaltyWeights
    theta: np.ndarray
    intercept: np.ndarray
    C: float
    time_augmented: bool = True
    normalization: str = "prefix"
    path_scale: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def channels(self):
        """Channel count of the raw feature series the model consumes."""
        return self.d - (1 if self.time_augmented else 0)

    def signature_row(self, features, t):
        return signature_rows(features, [t], self.N, self.time_augmented, self.normalization,
                              self.path_scale)[0]


def _fit_depth(ds, N, splits, n_lambdas, ratio, tol, max_iter, time_augment, normalize, path_scale):
    design = build_design(ds, N, time_augment, normalize, path_scale)
    weights = layer_weights(N)
    inv = inverse_layer_weights(weights, design.d)
    Xs = rescale_design(design.X, inv)
    path = lambda_path(Xs, design.Y, n_lambdas, ratio)
    cv = cross_validate(Xs, design.Y, path=path, splits=splits, tol=tol, max_iter=max_iter)
    return design, weights, inv, Xs, cv


def fit(ds, depth_grid=(2, 3, 4, 5, 6), cv_folds=DEFAULT_FOLDS, seed=0,
        n_lambdas=DEFAULT_N_LAMBDAS, ratio=DEFAULT_RATIO, tol=DEFAULT_TOL,
        max_iter=DEFAULT_MAX_ITER, time_augment=True, normalize=True, threads=1):
    """Cross-validate depth and penalty strength jointly, then refit on the full dataset.

    The same row splits are used for every depth. Ties prefer the smaller depth and,
    within a depth, the larger penalty. ``normalize`` selects the path rescaling (see
    ``signature_rows``); in ``"dataset"`` mode the constant is taken from ``ds`` and
    stored on the model so prediction uses the same one.
    """
    depth_grid = sorted(set(int(N) for N in depth_grid))
    if not depth_grid:
        raise ValueError("empty depth grid")
    if depth_grid[0] < 1 or depth_grid[-1] > MAX_FIT_DEPTH:
        raise ValueError(f"depths must lie in 1..{MAX_FIT_DEPTH}, got {depth_grid}")
    if ds.M < cv_folds:
        raise ValueError(f"{ds.M} target measurements cannot fill {cv_folds} folds")

    mode = normalization_mode(normalize)
    path_scale = dataset_scale(ds, time_augment) if mode == "dataset" else 1.0
    probe = build_design(ds, depth_grid[0], time_augment, mode, path_scale)
    splits = kfold_indices(probe.X.shape[0], cv_folds, seed)

    def run(N):
        return _fit_depth(ds, N, splits, n_lambdas, ratio, tol, max_iter, time_augment, mode, path_scale)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, depth_grid))
    else:
        results = [run(N) for N in depth_grid]

    best = min(range(len(results)), key=lambda i: (results[i][4].error, i))
    design, weights, inv, Xs, cv = results[best]
    lasso = fit_lasso(Xs, design.Y, cv.C, tol, max_iter)
    theta = lasso.theta * inv[:, None]
    theta[0] = 0.0
    curves = {
        int(N): {"C": [float(c) for c in r[4].path], "cv_error": [float(e) for e in r[4].errors]}
        for N, r in zip(depth_grid, results)
    }
    diagnostics = {
        "cv_curves": curves,
        "cv_error": cv.error,
        "sweeps": lasso.sweeps,
        "converged": lasso.converged,
        "kkt_residual": lasso.kkt_residual,
        "rows": int(design.X.shape[0]),
        "skipped_rows": design.skipped,
    }
    return SigLassoModel(design.N, design.d, ds.p, weights, theta, lasso.intercept, cv.C,
                         time_augment, mode, path_scale, diagnostics)


def predict_at(model, features, t):
    """Prediction from the feature prefix on ``[0, t]``; an empty prefix yields the intercept."""
    times = features.times
    if t < times[0] or t > times[-1]:
        raise ValueError(f"t={t:g} outside the feature time range")
    if t == times[0]:
        return model.intercept.copy()
    row = model.signature_row(features, t)
    if not np.all(np.isfinite(row)):
        raise DegeneratePathError("zero total variation")
    return model.intercept + row @ model.theta


def reconstruct(model, features, t_list):
    """Predictions at every ``t`` in ``t_list`` sharing one streamed pass over the prefix."""
    t_list = np.asarray(t_list, dtype=float).reshape(-1)
    times = features.times
    if len(t_list) and (t_list.min() < times[0] or t_list.max() > times[-1]):
        raise ValueError("t_list leaves the feature time range")
    rows = signature_rows(features, t_list, model.N, model.time_augmented, model.normalization,
                          model.path_scale)
    out = model.intercept + rows @ model.theta
    out[t_list == times[0]] = model.intercept
    return out


def pfi_from_theta(theta, d, N, letter):
    """Mean over ``k = 1..N`` of the norm of the coefficients on the pure word ``(letter,)*k``."""
    theta = np.asarray(theta, dtype=float).reshape(sig_dim(d, N), -1)
    if not 1 <= letter <= d:
        raise ValueError(f"letter {letter} outside 1..{d}")
    offsets = np.concatenate([[0], np.cumsum([d**k for k in range(N + 1)])])
    total = 0.0
    for k in range(1, N + 1):
        total += np.linalg.norm(theta[offsets[k] + word_index((letter,) * k, d)])
    return total / N


def cfi_from_theta(theta, d, N, letter):
    """Normalized sum of coefficient norms over every word of length <= N containing ``letter``."""
    theta = np.asarray(theta, dtype=float).reshape(sig_dim(d, N), -1)
    if not 1 <= letter <= d:
        raise ValueError(f"letter {letter} outside 1..{d}")
    norms = np.linalg.norm(theta, axis=1)
    total, start = 0.0, 1
    for k in range(1, N + 1):
        hit = np.array([letter in w for w in words(d, k)])
        total += norms[start : start + d**k][hit].sum()
        start += d**k
    count = sig_dim(d, N) - (sig_dim(d - 1, N) if d > 1 else 1)
    return total / count


def _letter(model, channel, include_time):
    if model.time_augmented:
        if channel == 0:
            if not include_time:
                raise ValueError("time channel excluded; pass include_time=True")
            return 1
        if not 1 <= channel <= model.channels:
            raise ValueError(f"channel {channel} outside 1..{model.channels}")
        return channel + 1
    if not 1 <= channel <= model.d:
        raise ValueError(f"channel {channel} outside 1..{model.d}")
    return channel


def pfi(model, channel, include_time=False):
    """Pure feature importance of an original channel (1-based; 0 is time when augmented)."""
    return pfi_from_theta(model.theta, model.d, model.N, _letter(model, channel, include_time))


def cfi(model, channel, include_time=False):
    return cfi_from_theta(model.theta, model.d, model.N, _letter(model, channel, include_time))


def feature_importance(model, include_time=False):
    """Rows ``(channel, pfi, cfi)``; channel 0 is time and only listed when requested."""
    channels = list(range(1, model.channels + 1))
    if include_time and model.time_augmented:
        channels = [0] + channels
    return [(c, pfi(model, c, include_time), cfi(model, c, include_time)) for c in channels]


def build_lagged_dataset(features, target, window, horizon):
    """One synthetic individual per target index ``t`` with a complete lagged window.

    The individual sees the ``window + 1`` feature samples ending at index ``t - horizon``,
    mapped onto an even grid over [0, 1]; its only target is ``target[t]`` at time 1.
    Record ids are the target indices.
    """
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be at least 1")
    fvals = np.asarray(getattr(features, "values", features), dtype=float)
    tvals = np.asarray(getattr(target, "values", target), dtype=float)
    if fvals.ndim == 1:
        fvals = fvals[:, None]
    if tvals.ndim == 1:
        tvals = tvals[:, None]
    if len(fvals) != len(tvals):
        raise ValueError("feature and target series must have the same length")
    grid = SamplingGrid(np.linspace(0.0, 1.0, window + 1))
    records = []
    for t in range(window + horizon, len(tvals)):
        end = t - horizon
        feats = TimeSeries(grid, fvals[end - window : end + 1])
        targ = TimeSeries(SamplingGrid([1.0]), tvals[t][None, :])
        records.append(IndividualRecord(feats, targ, id=str(t)))
    if not records:
        raise ValueError(
            f"window {window} + horizon {horizon} leaves no target in a series of length {len(tvals)}"
        )
    return Dataset(records)


def held_out_mse(model, ds):
    """Mean squared error of the model at the target measurements of ``ds``."""
    errs = []
    for rec in ds:
        pred = reconstruct(model, rec.features, rec.targets.times)
        errs.append((pred - rec.targets.values) ** 2)
    return float(np.mean(np.vstack(errs)))

