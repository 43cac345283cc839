"""Multi-trial training experiments: L sweeps, reference-index sweeps and slow annealing.

Every trial is an independent, single-threaded training run whose seed is
derived from the experiment's root seed and the trial's position. Trials
may run in worker processes; results are always merged in trial order.
"""
from __future__ import annotations

import io
import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dib import TrainerConfig, train
from .entropy_rate import ScalingFit, ScalingFitError, ctw_entropy_rate, estimate_h_inf
from .files import atomic_write, csv_preamble
from .maps import MapSpec, generate_trajectory, lyapunov_spectrum
from .partitions import (
    NeuralPartition,
    Partition,
    SymbolSequence,
    measurement_entropy,
    save_partition,
    shift_coloring,
    symbolize,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("fig2", "fig3_ref_sweep", "fig3_slow_anneal")
FAST_EVAL_LENGTH = 200_000
EVAL_BURN_IN = 10_000


def trial_seed(root: int, group: int, trial: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=(group, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class TrialSpec:
    group: int
    trial: int
    config: TrainerConfig
    eval_length: int = FAST_EVAL_LENGTH


@dataclass
class TrialOutcome:
    spec: TrialSpec
    partition: NeuralPartition
    steps: int
    stop_reason: str
    H_U: float
    h_fast: float
    curves_csv: str = field(repr=False, default="")


def evaluation_states(m: MapSpec, n: int) -> np.ndarray:
    # separate orbit from the training pool (different x0 and burn-in)
    return generate_trajectory(m, n=n, burn_in=EVAL_BURN_IN).states


def fast_entropy_rate(p: Partition, m: MapSpec, n: int = FAST_EVAL_LENGTH) -> tuple[float, float]:
    """(H(U), CTW rate at length n) on a fixed evaluation orbit; no scaling fit."""
    s = symbolize(p, evaluation_states(m, n))
    return measurement_entropy(s), ctw_entropy_rate(s).value


def run_trial(spec: TrialSpec) -> TrialOutcome:
    run = train(spec.config)
    H_U, h = fast_entropy_rate(run.partition, spec.config.map, spec.eval_length)
    log.info("group %d trial %d: %s after %d steps, H(U)=%.4f h_fast=%.4f", spec.group, spec.trial,
             run.stop_reason, run.steps, H_U, h)
    return TrialOutcome(spec, run.partition, run.steps, run.stop_reason, H_U, h, run.curves_csv())


def run_trials(specs: Sequence[TrialSpec], parallel: int = 1) -> list[TrialOutcome]:
    if parallel <= 1:
        return [run_trial(s) for s in specs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(run_trial, specs))


def best_of(outcomes: Sequence[TrialOutcome]) -> TrialOutcome:
    """Highest fast entropy rate; the earliest trial wins ties."""
    return max(outcomes, key=lambda o: (o.h_fast, -o.spec.trial))


@dataclass
class ExperimentResult:
    kind: str
    map: MapSpec
    h_ks: float
    outcomes: list[TrialOutcome]
    best: dict[int, TrialOutcome]
    best_fit: dict[int, ScalingFit] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def group_key(self, o: TrialOutcome) -> dict:
        c = o.spec.config
        return {"L": c.L, "ref_index": c.ref_index, "anneal_multiplier": c.anneal_multiplier}

    def rows(self) -> list[dict]:
        out = []
        for o in self.outcomes:
            row = {"map": self.map.name, **self.group_key(o), "trial": o.spec.trial, "seed": o.spec.config.seed,
                   "steps": o.steps, "stop_reason": o.stop_reason, "H_U_bits": o.H_U, "h_fast_bits": o.h_fast,
                   "frac_dev_fast": (self.h_ks - o.h_fast) / self.h_ks}
            is_best = self.best[o.spec.group] is o
            fit = self.best_fit.get(o.spec.group) if is_best else None
            row["best"] = int(is_best)
            row["h_inf_bits"] = fit.h_inf if fit else ""
            row["h_inf_stderr"] = fit.stderr_h_inf if fit else ""
            row["frac_dev"] = (self.h_ks - fit.h_inf) / self.h_ks if fit else ""
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(csv_preamble(self.config))
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def medians(self, column: str = "frac_dev_fast") -> dict[int, float]:
        by: dict[int, list[float]] = {}
        for r in self.rows():
            by.setdefault(r["L"], []).append(r[column])
        return {L: float(np.median(v)) for L, v in by.items()}


def experiment_specs(kind: str, base: TrainerConfig, trials: int, seed: int,
                     L_values: Sequence[int] = tuple(range(1, 13)),
                     eval_length: int = FAST_EVAL_LENGTH) -> list[TrialSpec]:
    if kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {kind!r}; choose from {', '.join(EXPERIMENTS)}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    groups: list[TrainerConfig] = []
    if kind == "fig2":
        groups = [replace(base, L=L, ref_index=L // 2) for L in L_values]
    else:
        L = base.L
        mult = 0.5 if kind == "fig3_slow_anneal" else base.anneal_multiplier
        groups = [replace(base, L=L, ref_index=r, anneal_multiplier=mult) for r in range(L)]
    return [TrialSpec(g, t, replace(cfg, seed=trial_seed(seed, g, t)), eval_length)
            for g, cfg in enumerate(groups) for t in range(trials)]


def reproduce_experiment(
    kind: str,
    map: MapSpec,
    trials: int = 20,
    seed: int = 0,
    base: TrainerConfig | None = None,
    L_values: Sequence[int] = tuple(range(1, 13)),
    parallel: int = 1,
    full_protocol: bool = True,
    protocol_dataset: int = 2_000_000,
    eval_length: int = FAST_EVAL_LENGTH,
    out_dir: str | Path | None = None,
    cloud_points: int = 20_000,
) -> ExperimentResult:
    """Run the trials of ``kind``, pick the best partition per group and certify it.

    The per-group winner (highest CTW rate at ``eval_length``) gets the full
    finite-size protocol with a scaling fit on ``protocol_dataset`` points.
    With ``out_dir`` the dataset CSV, winning partitions, loss curves and
    colored clouds of the winners are written there.
    """
    base = replace(base or TrainerConfig(), map=map)
    specs = experiment_specs(kind, base, trials, seed, L_values, eval_length)
    outcomes = run_trials(specs, parallel)
    h_ks = lyapunov_spectrum(map, 1_000_000, seed=0).h_ks
    groups: dict[int, list[TrialOutcome]] = {}
    for o in outcomes:
        groups.setdefault(o.spec.group, []).append(o)
    best = {g: best_of(v) for g, v in groups.items()}
    fits = {}
    if full_protocol:
        for g, o in best.items():
            try:
                fits[g] = estimate_h_inf(o.partition, map, dataset_size=protocol_dataset, seed=seed)
            except ScalingFitError as e:
                log.warning("scaling fit failed for group %d: %s", g, e)
                fits[g] = e.best
    echo = {"kind": kind, "trials": trials, "seed": seed, "L_values": ",".join(map_str(L_values)),
            "full_protocol": full_protocol, "protocol_dataset": protocol_dataset, "eval_length": eval_length,
            **{k: v for k, v in base.echo().items() if k not in ("seed",)}}
    if kind == "fig2":
        echo.pop("L"), echo.pop("ref_index")
    res = ExperimentResult(kind, map, h_ks, outcomes, best, fits, echo)
    if out_dir is not None:
        write_experiment(res, Path(out_dir), cloud_points)
    return res


def map_str(values) -> list[str]:
    return [str(v) for v in values]


def write_experiment(res: ExperimentResult, out: Path, cloud_points: int = 20_000) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / f"{res.kind}_{res.map.name}.csv", res.to_csv())
    states = evaluation_states(res.map, cloud_points) if res.kind != "fig2" else None
    for g, o in sorted(res.best.items()):
        c = o.spec.config
        tag = f"L{c.L}_ref{c.ref_index}"
        save_partition(o.partition, out / f"partition_{tag}.npz")
        atomic_write(out / f"curves_{tag}_trial{o.spec.trial}.csv", o.curves_csv)
        if states is not None:
            cloud = shift_coloring(states, symbolize(o.partition, states), 0)
            buf = io.StringIO()
            cloud.write(buf)
            atomic_write(out / f"cloud_{tag}.csv", csv_preamble(res.config) + buf.getvalue())


@dataclass
class CertificationTable:
    """Finite-size protocol results of one partition under several estimators."""

    fits: dict[str, ScalingFit | None]
    windows: dict[str, list]
    H_U: float

    def rows(self) -> list[dict]:
        """One row per (method, N, repeat), then a summary row per method with N = inf.

        Window rows carry the standard error of the mean at their N; summary rows
        carry h_inf and its standard error in the same columns, plus c and gamma.
        """
        from .entropy_rate import summarize

        out = []
        for method, ws in self.windows.items():
            sem = {n: se for n, _, se in summarize(ws)}
            for w in ws:
                out.append({"method": method, "N": w.n, "repeat": w.repeat, "value_bits": w.estimate.value,
                            "stderr": sem[w.n], "c": "", "gamma": ""})
        for method, fit in self.fits.items():
            if fit is not None:
                out.append({"method": method, "N": "inf", "repeat": "", "value_bits": fit.h_inf,
                            "stderr": fit.stderr_h_inf, "c": fit.c, "gamma": fit.gamma})
        return out


def certify_sequence(seq: SymbolSequence, methods: Sequence[str] = ("ctw",), seed: int = 0,
                     lengths: Sequence[int] | None = None, repeats: int = 5) -> CertificationTable:
    """Finite-size protocol and scaling fit per estimator on a given symbol sequence.

    A failed scaling fit is recorded as ``None`` for that estimator.
    """
    from .entropy_rate import finite_size_protocol, fit_scaling_ansatz, log_lengths, summarize

    if lengths is None:
        lengths = log_lengths(2e3, min(2e6, len(seq)))
    fits, windows = {}, {}
    for method in methods:
        ws = finite_size_protocol(seq, method, lengths, repeats, seed)
        windows[method] = ws
        try:
            fits[method] = fit_scaling_ansatz(summarize(ws))
        except ScalingFitError as e:
            log.warning("%s: %s", method, e)
            fits[method] = None
    return CertificationTable(fits, windows, measurement_entropy(seq))


def certify(p: Partition, m: MapSpec, methods: Sequence[str] = ("ctw",), dataset_size: int = 20_000_000,
            seed: int = 0, lengths: Sequence[int] | None = None, repeats: int = 5) -> CertificationTable:
    """Symbolize one orbit of ``m``, then certify the resulting sequence."""
    seq = symbolize(p, generate_trajectory(m, n=dataset_size, seed=seed))
    return certify_sequence(seq, methods, seed, lengths, repeats)


def random_partition_scan(m: MapSpec, seed: int = 0, samples_per_config: int = 20, method: str = "fast",
                          eval_length: int = FAST_EVAL_LENGTH, dataset_size: int = 2_000_000,
                          lengths: Sequence[int] | None = None, repeats: int = 3) -> list[dict]:
    """H(U) and entropy rate of every random-network partition on one orbit of ``m``.

    ``method="fast"`` is a single CTW pass over ``eval_length`` symbols;
    ``method="protocol"`` fits the scaling ansatz over ``lengths`` (default
    15 log-spaced lengths in [2e3, 2e5]) on a ``dataset_size`` orbit.
    """
    from .entropy_rate import finite_size_protocol, fit_scaling_ansatz, log_lengths, summarize
    from .partitions import sample_random_partitions

    if method not in ("fast", "protocol"):
        raise ValueError(f"unknown scan method {method!r}; choose fast or protocol")
    parts = sample_random_partitions(seed=seed, samples_per_config=samples_per_config, input_dim=m.dim)
    n = eval_length if method == "fast" else dataset_size
    states = evaluation_states(m, n)
    lengths = lengths or log_lengths(2e3, min(2e5, n))
    rows = []
    for i, p in enumerate(parts):
        s = symbolize(p, states)
        row = {"index": i, "config": p.spec.label, "layers": p.spec.n_layers, "activation": p.spec.activation,
               "alphabet_size": p.alphabet_size, "seed": p.spec.seed, "H_U_bits": measurement_entropy(s)}
        if method == "fast":
            row["h_inf_bits"], row["h_inf_stderr"] = ctw_entropy_rate(s).value, ""
        else:
            try:
                fit = fit_scaling_ansatz(summarize(finite_size_protocol(s, "ctw", lengths, repeats, seed + i)))
            except ScalingFitError as e:
                fit = e.best
            row["h_inf_bits"], row["h_inf_stderr"] = fit.h_inf, fit.stderr_h_inf
        rows.append(row)
    return rows


def rows_to_csv(rows: Sequence[dict], config: dict) -> str:
    buf = io.StringIO()
    buf.write(csv_preamble(config))
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
