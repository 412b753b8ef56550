"""Irregularly sampled time series and their piecewise-linear interpolations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    """A sampling grid breaks one of the admissibility clauses."""


class DegeneratePathError(ValueError):
    """The path has zero total variation and cannot be normalized."""


@dataclass(frozen=True)
class SamplingGrid:
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return len(self.times)


def validate_grid(grid, eta=0.0):
    """Return the list of violated clauses; an empty list means the grid is admissible."""
    times = np.asarray(getattr(grid, "times", grid), dtype=float).reshape(-1)
    problems = []
    if len(times) == 0 or times[0] != 0.0:
        problems.append("0 ∉ grid")
    if len(times) < 2:
        problems.append("#grid < 2")
    if len(times) and times[-1] < eta:
        problems.append(f"last time {times[-1]:g} < eta={eta:g}")
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        problems.append("grid not strictly increasing")
    if len(times) and (times[0] < 0 or times[-1] > 1):
        problems.append("grid leaves [0, 1]")
    return problems


def check_grid(grid, eta=0.0):
    problems = validate_grid(grid, eta)
    if problems:
        raise GridError("; ".join(problems))


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``values[k]`` taken at ``grid.times[k]``; one row per sample."""

    grid: SamplingGrid
    values: np.ndarray

    def __post_init__(self):
        if not isinstance(self.grid, SamplingGrid):
            object.__setattr__(self, "grid", SamplingGrid(self.grid))
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(self.grid):
            raise ValueError(
                f"{values.shape[0]} rows of values for a grid of {len(self.grid)} times"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("time series contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def times(self):
        return self.grid.times

    @property
    def channels(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class IndividualRecord:
    features: TimeSeries
    targets: TimeSeries
    id: str = ""

    def __post_init__(self):
        missing = np.setdiff1d(self.targets.times, self.features.times)
        if len(missing):
            raise GridError(f"target times {missing.tolist()} are not feature times")


class PiecewiseLinearPath:
    """Linear interpolation through ``knot_values`` at ``knots``."""

    def __init__(self, knots, knot_values):
        self.knots = np.asarray(getattr(knots, "times", knots), dtype=float).reshape(-1)
        values = np.asarray(knot_values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != len(self.knots):
            raise ValueError("knot_values must have one row per knot")
        if len(self.knots) > 1 and np.any(np.diff(self.knots) <= 0):
            raise GridError("grid not strictly increasing")
        self.knot_values = values
        self.increments = np.diff(values, axis=0)
        self.slopes = self.increments / np.diff(self.knots)[:, None]
        self.knots.setflags(write=False)
        self.knot_values.setflags(write=False)

    @property
    def channels(self):
        return self.knot_values.shape[1]

    def _check_time(self, t):
        if t < self.knots[0] or t > self.knots[-1]:
            raise ValueError(
                f"t={t:g} outside knot range [{self.knots[0]:g}, {self.knots[-1]:g}]"
            )

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.knots[0]) or np.any(t > self.knots[-1]):
            raise ValueError("evaluation time outside knot range")
        return np.stack(
            [np.interp(t, self.knots, self.knot_values[:, c]) for c in range(self.channels)],
            axis=-1,
        )

    def segment_increments(self, t_end):
        """Increments of the linear pieces covering ``[knots[0], t_end]``, the last one cut at ``t_end``."""
        self._check_time(t_end)
        j = int(np.searchsorted(self.knots, t_end, side="right")) - 1
        incs = self.increments[:j]
        if j < len(self.knots) - 1 and t_end > self.knots[j]:
            partial = (t_end - self.knots[j]) * self.slopes[j]
            incs = np.vstack([incs, partial[None, :]])
        return incs

    def scaled(self, factor):
        return PiecewiseLinearPath(self.knots, self.knot_values * factor)


def interpolate_linear(ts):
    check_grid(ts.grid)
    return PiecewiseLinearPath(ts.times, ts.values)


def total_variation(path, t_end=None):
    if t_end is None:
        t_end = path.knots[-1]
    incs = path.segment_increments(t_end)
    return float(np.linalg.norm(incs, axis=1).sum()) if len(incs) else 0.0


def cumulative_variation(path):
    """Total variation on ``[knots[0], knots[j]]`` for every knot ``j``."""
    lengths = np.linalg.norm(path.increments, axis=1)
    return np.concatenate([[0.0], np.cumsum(lengths)])


def time_augment(ts):
    """Prepend the timestamps as channel 0. Not idempotent: a second call adds time again."""
    values = np.column_stack([ts.times, ts.values])
    return TimeSeries(ts.grid, values)


def normalize_by_tv(path, t_end=None):
    tv = total_variation(path, t_end)
    if tv <= 0.0:
        raise DegeneratePathError("zero total variation")
    return path.scaled(1.0 / tv)


def mesh_size(grid):
    times = np.asarray(getattr(grid, "times", grid), dtype=float)
    if len(times) < 2:
        raise GridError("mesh size needs at least 2 grid points")
    return float(np.max(np.diff(times)))
