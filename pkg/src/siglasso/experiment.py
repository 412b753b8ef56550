"""End-to-end desk-scale runs: simulate, fit, reconstruct on dense test paths, score."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import metrics
from .pipeline import Dataset, fit, reconstruct
from .simulate import SimulationConfig, simulate


def test_config(config, n_test, seed_offset=10_000):
    """Same dynamics, fresh individuals, dense (not downsampled) noise-free features."""
    system_seed = config.seed if config.system_seed is None else config.system_seed
    return replace(config, n=n_test, seed=config.seed + seed_offset, system_seed=system_seed,
                   downsample=False, noise_x=0.0, noise_y=0.0)


def run_setting(config, n_test=20, depth_grid=(2, 3, 4, 5, 6), folds=5, fit_seed=0, **fit_kw):
    """Fit on ``config``'s training set and score reconstructions of fresh test individuals."""
    train = simulate(config)
    model = fit(Dataset([s.record for s in train]), depth_grid, folds, fit_seed, **fit_kw)
    test = simulate(test_config(config, n_test))
    preds, truth = {}, {}
    for s in test:
        rec = s.record
        preds[rec.id] = (rec.features.times, reconstruct(model, rec.features, rec.features.times))
        ok = np.all(np.isfinite(s.targets), axis=1)
        truth[rec.id] = (s.grid[ok], s.targets[ok])
    return model, metrics.evaluate(preds, truth)
