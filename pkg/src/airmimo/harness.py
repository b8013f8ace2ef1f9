"""Experiment orchestration: single points, sweeps and channel dataset export."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from airmimo.channel import generate_channel_tensor
from airmimo.config import SNR_CONVENTION, ScenarioConfig, SweepSpec
from airmimo.io import ResultRow, write_channels
from airmimo.link import run_trial
from airmimo.tensor import RandomSource

__all__ = ["export_channels", "run_point", "run_sweep", "sweep_meta"]

log = logging.getLogger(__name__)


def _trial_row(args) -> ResultRow:
    scenario, scheme, axis, axis_value, trial = args
    report = run_trial(scenario, scheme, RandomSource(scenario.seed, trial))
    return ResultRow(
        scheme=scheme,
        axis=axis,
        axis_value=float(axis_value),
        trial=trial,
        sum_rate_bps_hz=float(report.sum_rate),
        min_user_rate_bps_hz=report.min_user_rate,
        mean_empirical_mse=float(np.mean(report.empirical_mse)),
        mean_analytical_mse=float(np.mean(report.analytical_mse)),
        elapsed_ms=float(report.elapsed_ms) if scenario.record_timing else 0.0,
        seed=scenario.seed,
    )


def _jobs(points: Sequence[tuple], repetitions: int, axis: str):
    # Trial t always draws from stream t, so every scheme and every axis
    # value sees the same channels, errors, symbols and noise.
    for value, scenario in points:
        for scheme in sorted(scenario.schemes):
            for trial in range(repetitions):
                yield scenario, scheme, axis, value, trial


def _execute(jobs: list, workers: int) -> List[ResultRow]:
    if workers <= 1:
        return [_trial_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so output order is scheduling-independent
        return list(pool.map(_trial_row, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_point(cfg: ScenarioConfig, workers: int = 1) -> List[ResultRow]:
    """``cfg.trials`` trials of every scheme at the configured operating point."""
    jobs = list(_jobs([(cfg.snr_db, cfg)], cfg.trials, "snr_db"))
    return _execute(jobs, workers)


def run_sweep(cfg: ScenarioConfig, sweep: SweepSpec, workers: int = 1) -> List[ResultRow]:
    """Rows for every (axis value, scheme, repetition), in that nesting order.

    Schemes are sorted lexicographically within each axis value.
    """
    points = [(v, cfg.with_axis(sweep.axis, v)) for v in sweep.values]
    jobs = list(_jobs(points, sweep.repetitions, sweep.axis))
    log.info("sweep over %s: %d points x %d schemes x %d repetitions",
             sweep.axis, len(points), len(cfg.schemes), sweep.repetitions)
    return _execute(jobs, workers)


def sweep_meta(cfg: ScenarioConfig, sweep: Optional[SweepSpec] = None) -> dict:
    meta = {
        "snr_convention": SNR_CONVENTION,
        "noise_variance": cfg.noise_variance,
        "scenario": cfg.model_dump(mode="json"),
        "scenario_hash": cfg.digest(),
    }
    if sweep is not None:
        meta["sweep"] = sweep.model_dump(mode="json")
    return meta


def export_channels(cfg: ScenarioConfig, count: int, path) -> int:
    """Draw ``count`` true channel tensors (sample ``i`` from stream ``i``) and write them."""
    if count < 1:
        raise ValueError("count must be >= 1")
    spec, geom = cfg.multipath(), cfg.geometry()
    tensors = np.stack([
        generate_channel_tensor(RandomSource(cfg.seed, i), cfg.K, spec, geom) for i in range(count)
    ])
    return write_channels(path, tensors)
