"""Scores for reconstructed trajectories: last-point MSE, step-function L2 error, RMSE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def mse_last_point(pred, truth):
    """Mean over individuals of the squared error at each individual's final time.

    ``pred`` and ``truth`` map individual ids to the vector at that time.
    """
    if set(pred) != set(truth):
        missing = sorted(set(truth) ^ set(pred))
        raise KeyError(f"individual ids differ between predictions and truth: {missing}")
    if not pred:
        raise ValueError("no individuals")
    errs = [np.sum((np.atleast_1d(pred[k]) - np.atleast_1d(truth[k])) ** 2) for k in sorted(pred)]
    return float(np.mean(errs))


def _step_values(times, values, at):
    """Value held forward from the latest sample at or before each point of ``at``."""
    idx = np.searchsorted(times, at, side="right") - 1
    return values[np.clip(idx, 0, len(times) - 1)]


def l2_piecewise_constant(pred_times, pred_values, true_times, true_values, t_end=1.0):
    """Root of the integral of the squared gap between two step interpolations.

    Each series holds its value from every sample forward, the last one up to ``t_end``.
    Integration runs over the span both series cover; the result is exact on the merged
    breakpoint grid.
    """
    pt = np.asarray(pred_times, dtype=float)
    tt = np.asarray(true_times, dtype=float)
    if len(pt) == 0 or len(tt) == 0:
        raise ValueError("empty series")
    pv = np.asarray(pred_values, dtype=float).reshape(len(pt), -1)
    tv = np.asarray(true_values, dtype=float).reshape(len(tt), -1)
    start = max(pt[0], tt[0])
    end = max(t_end, pt[-1], tt[-1])
    breaks = np.unique(np.concatenate([pt, tt, [start, end]]))
    breaks = breaks[(breaks >= start) & (breaks <= end)]
    if len(breaks) < 2:
        return 0.0
    left = breaks[:-1]
    gap = _step_values(pt, pv, left) - _step_values(tt, tv, left)
    return float(np.sqrt(np.sum(np.sum(gap**2, axis=1) * np.diff(breaks))))


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if len(pred) != len(truth) or len(pred) == 0:
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truths")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


@dataclass
class EvaluationReport:
    per_individual: dict = field(default_factory=dict)
    mse_last_point: float = float("nan")
    l2_error: float = float("nan")
    rmse: float | None = None
    skipped_points: int = 0

    def to_dict(self):
        return {
            "mse_last_point": self.mse_last_point,
            "l2_error": self.l2_error,
            "rmse": self.rmse,
            "skipped_points": self.skipped_points,
            "per_individual": self.per_individual,
        }


def evaluate(predictions, truth, forecast=False):
    """Score ``{id: (times, values)}`` predictions against ``{id: (times, values)}`` truth.

    Non-finite prediction rows are dropped and counted. The L2 aggregate is the mean of
    the per-individual L2 errors.
    """
    if set(predictions) != set(truth):
        raise KeyError(
            "ids missing from predictions: "
            f"{sorted(set(truth) - set(predictions))}; unknown ids: {sorted(set(predictions) - set(truth))}"
        )
    report = EvaluationReport()
    last_pred, last_true, all_pred, all_true = {}, {}, [], []
    for key in sorted(truth):
        pt, pv = (np.asarray(a, dtype=float) for a in predictions[key])
        tt, tv = (np.asarray(a, dtype=float) for a in truth[key])
        pv = pv.reshape(len(pt), -1)
        tv = tv.reshape(len(tt), -1)
        ok = np.all(np.isfinite(pv), axis=1)
        report.skipped_points += int(np.sum(~ok))
        pt, pv = pt[ok], pv[ok]
        if len(pt) == 0:
            raise ValueError(f"individual {key} has no finite predictions")
        l2 = l2_piecewise_constant(pt, pv, tt, tv)
        last_pred[key], last_true[key] = pv[-1], _step_values(tt, tv, pt[-1:])[0]
        entry = {"l2_error": l2, "sq_error_last": float(np.sum((pv[-1] - last_true[key]) ** 2))}
        if forecast:
            matched = _step_values(tt, tv, pt)
            all_pred.append(pv.ravel())
            all_true.append(matched.ravel())
            entry["rmse"] = rmse(pv, matched)
        report.per_individual[key] = entry
    report.mse_last_point = mse_last_point(last_pred, last_true)
    report.l2_error = float(np.mean([e["l2_error"] for e in report.per_individual.values()]))
    if forecast:
        report.rmse = rmse(np.concatenate(all_pred), np.concatenate(all_true))
    return report
