"""Empirical convergence of discretized, noisy signatures toward the dense-path signature."""

from __future__ import annotations

import math

import numpy as np

from .paths import PiecewiseLinearPath, normalize_by_tv
from .signature import layer_sup_distance, path_signature
from .simulate import dense_grid, gen_smooth_driver

DEFAULT_SAMPLES = (10, 20, 50, 100, 200, 500)
DEFAULT_NOISES = (0.0, 0.0064, 0.25)


def path_sup_distance(x, z):
    """``sup_t ||x_t - z_t||`` for piecewise-linear paths, each held constant past its last knot.

    Both paths are linear between the merged knots, so the supremum sits on a knot.
    """
    end = max(x.knots[-1], z.knots[-1])
    ts = np.unique(np.concatenate([x.knots, z.knots]))
    ts = ts[ts <= end]
    # np.interp holds the end values beyond the last knot
    xv = np.column_stack([np.interp(ts, x.knots, c) for c in x.knot_values.T])
    zv = np.column_stack([np.interp(ts, z.knots, c) for c in z.knot_values.T])
    return float(np.max(np.linalg.norm(xv - zv, axis=1)))


def discretize(grid, values, k, noise, rng):
    """Time 0 plus ``k - 1`` draws from the dense grid; noise goes on value channels only."""
    idx = np.unique(np.concatenate([[0], rng.choice(np.arange(1, len(grid)), size=k - 1, replace=True)]))
    vals = values[idx] + (rng.normal(0.0, math.sqrt(noise), values[idx].shape) if noise > 0 else 0.0)
    return grid[idx], vals


def run_sigcheck(noises=DEFAULT_NOISES, depths=(1, 2, 3, 4), samples=DEFAULT_SAMPLES, reps=50,
                 seed=0, dims=2, dense_points=1001):
    """Long-form rows ``(noise, samples, depth, mean_distance, std_distance, mean_bound, violations)``.

    Per repetition a smooth driver is drawn, time-augmented and normalized to unit total
    variation; each discretization is normalized by its own total variation. ``mean_bound``
    averages the layer-Lipschitz bound ``c_k * ||x - z||_inf`` with ``c_1 = 2`` and
    ``c_k = 2e`` for ``k >= 2`` (unit variation), and ``violations`` counts repetitions
    where the measured distance at the final time exceeds it.
    """
    depths = sorted(set(int(k) for k in depths))
    samples = sorted(set(int(k) for k in samples))
    if not depths or depths[0] < 1 or not samples or samples[0] < 2 or reps < 1:
        raise ValueError("need depths >= 1, samples >= 2 and reps >= 1")
    if any(v < 0 for v in noises):
        raise ValueError("noise variances must be nonnegative")
    N = depths[-1]
    grid = dense_grid(dense_points)
    stats = {}
    children = np.random.SeedSequence(seed).spawn(reps)
    for child in children:
        drv_rng, *noise_rngs = (np.random.default_rng(s) for s in child.spawn(1 + len(noises)))
        drv = gen_smooth_driver(dims, drv_rng, grid)
        x = normalize_by_tv(PiecewiseLinearPath(grid, np.column_stack([grid, drv.knot_values])))
        sig_x = path_signature(x, N)
        for noise, rng in zip(noises, noise_rngs):
            for k in samples:
                times, vals = discretize(grid, drv.knot_values, k, noise, rng)
                z = normalize_by_tv(PiecewiseLinearPath(times, np.column_stack([times, vals])))
                sig_z = path_signature(z, N)
                gap = path_sup_distance(x, z)
                for depth in depths:
                    dist = layer_sup_distance(sig_x, sig_z, depth)
                    bound = (2.0 if depth == 1 else 2.0 * math.e) * gap
                    stats.setdefault((noise, k, depth), []).append((dist, bound))
    rows = []
    for (noise, k, depth), vals in sorted(stats.items()):
        a = np.array(vals)
        rows.append((noise, k, depth, float(a[:, 0].mean()), float(a[:, 0].std()),
                     float(a[:, 1].mean()), int(np.sum(a[:, 0] > a[:, 1]))))
    return rows


SIGCHECK_HEADER = ["noise", "samples", "depth", "mean_distance", "std_distance", "mean_bound", "violations"]


def loglog_slope(rows, noise, depth, lo=None, hi=None):
    """Least-squares slope of log mean distance against log sample count."""
    pts = [(r[1], r[3]) for r in rows if r[0] == noise and r[2] == depth
           and (lo is None or r[1] >= lo) and (hi is None or r[1] <= hi)]
    if len(pts) < 2:
        raise ValueError("need at least two sample counts")
    k, dist = np.array(pts).T
    return float(np.polyfit(np.log(k), np.log(dist), 1)[0])
