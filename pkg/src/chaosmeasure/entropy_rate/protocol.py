"""Finite-size estimation protocol and the end-to-end h_inf estimate for a partition."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..maps import MapSpec, generate_trajectory
from ..partitions import Partition, SymbolSequence, symbolize
from .estimators import EntropyEstimate, Estimator, get_estimator
from .scaling import ScalingFit, fit_scaling_ansatz

DEFAULT_LENGTHS = tuple(int(round(v)) for v in np.geomspace(2e3, 2e6, 15))
DEFAULT_REPEATS = 5
DEFAULT_DATASET = 20_000_000


@dataclass(frozen=True)
class WindowEstimate:
    n: int
    repeat: int
    offsets: tuple[int, ...]
    estimate: EntropyEstimate


def log_lengths(lo: float, hi: float, count: int = 15) -> tuple[int, ...]:
    return tuple(int(round(v)) for v in np.geomspace(lo, hi, count))


def finite_size_protocol(
    full: SymbolSequence,
    estimator: str | Estimator = "ctw",
    lengths: Sequence[int] = DEFAULT_LENGTHS,
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
) -> list[WindowEstimate]:
    """Run ``estimator`` on ``repeats`` random contiguous windows for each length.

    Window offsets are uniform over all valid starts and may overlap. An
    estimator that consumes two windows (cross parsing) gets two independent
    draws.
    """
    est = get_estimator(estimator)
    if len(full) < max(lengths):
        raise ValueError(f"dataset of {len(full)} symbols is shorter than the longest window {max(lengths)}")
    rng = np.random.default_rng(seed)
    out = []
    for n in lengths:
        for r in range(repeats):
            offsets = tuple(int(o) for o in rng.integers(0, len(full) - n + 1, size=est.windows))
            windows = [full[o:o + n] for o in offsets]
            out.append(WindowEstimate(int(n), r, offsets, est(*windows)))
    return out


def summarize(results: Sequence[WindowEstimate]) -> list[tuple[int, float, float]]:
    """(N, mean, standard error of the mean) per window length."""
    by_n: dict[int, list[float]] = {}
    for w in results:
        by_n.setdefault(w.n, []).append(w.estimate.value)
    out = []
    for n, vals in by_n.items():
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        out.append((n, float(v.mean()), se))
    return out


def estimate_h_inf(
    p: Partition,
    m: MapSpec,
    dataset_size: int = DEFAULT_DATASET,
    seed: int = 0,
    lengths: Sequence[int] | None = None,
    repeats: int = DEFAULT_REPEATS,
    estimator: str | Estimator = "ctw",
    x0=None,
    return_protocol: bool = False,
):
    """Trajectory -> symbols -> finite-size protocol -> scaling-ansatz extrapolation.

    Without explicit ``lengths``, 15 log-spaced lengths from 2e3 up to
    ``min(2e6, dataset_size)`` are used.
    """
    if lengths is None:
        lengths = log_lengths(2e3, min(2e6, dataset_size))
    traj = generate_trajectory(m, x0=x0, n=dataset_size, seed=seed)
    seq = symbolize(p, traj)
    del traj
    results = finite_size_protocol(seq, estimator, lengths, repeats, seed)
    fit = fit_scaling_ansatz(summarize(results))
    return (fit, results) if return_protocol else fit
