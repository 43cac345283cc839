"""Command-line entry point.

Every command accepts ``--config FILE`` with ``key=value`` lines; explicit
flags override file values. Each run writes a config echo next to its
outputs that, fed back through ``--config``, reproduces the run.

Exit codes: 0 success, 2 usage or precondition error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .dib import TrainerConfig, TrainingDiverged
from .entropy_rate import ESTIMATORS, ScalingFitError, log_lengths
from .files import atomic_write, format_kv, parse_kv, read_symbols, write_trajectory
from .maps import EscapeError, generate_trajectory, lyapunov_spectrum, map_from_name
from .partitions import ThresholdPartition, load_partition, shift_coloring, symbolize

EXIT_USAGE = 2
EXIT_NUMERIC = 3

MAP_KEYS = ("map", "r", "a", "b", "kappa", "eta")

DEFAULTS: dict[str, dict] = {
    "simulate": {"map": "logistic", "n": 1_000_000, "burn_in": 1000, "seed": 0},
    "estimate": {"map": "logistic", "method": "ctw", "dataset": 20_000_000, "repeats": 5, "seed": 0,
                 "min_length": 2000, "max_length": 2_000_000, "lengths": 15},
    "train": {"map": "ikeda", "experiment": "fig2", "trials": 1, "seed": 0, "parallel": 1, "anneal": 1.0,
              "batch_size": 2048, "steps": 20_000, "eval_length": 200_000, "protocol_dataset": 2_000_000,
              "full_protocol": True},
    "iterate": {"map": "logistic", "k_min": -3, "k_max": 3, "n": 20_000, "burn_in": 10_000},
    "random-partitions": {"map": "ikeda", "seed": 0, "samples_per_config": 20, "method": "fast",
                          "eval_length": 200_000, "dataset": 2_000_000, "repeats": 3},
}

INT_KEYS = {"n", "burn_in", "seed", "dataset", "repeats", "min_length", "max_length", "lengths", "trials",
            "parallel", "batch_size", "steps", "eval_length", "protocol_dataset", "k_min", "k_max", "L",
            "ref_index", "samples_per_config", "alphabet"}
FLOAT_KEYS = {"r", "a", "b", "kappa", "eta", "anneal"}
BOOL_KEYS = {"full_protocol"}


class UsageError(Exception):
    pass


def _map_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map", choices=["logistic", "henon", "ikeda"])
    for k in ("r", "a", "b", "kappa", "eta"):
        p.add_argument(f"--{k}", type=float)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chaosmeasure", description="Learned measurements of chaotic maps.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="iterate a map and write a binary trajectory")
    _common(p)
    _map_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--out", help="trajectory file (default <map>.bin)")

    p = sub.add_parser("estimate", help="certify a partition's entropy rate")
    _common(p)
    _map_flags(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--partition", help="partition file (.npz)")
    src.add_argument("--threshold", help="comma-separated boundaries on the first coordinate")
    src.add_argument("--symbols", help="raw symbol file, one symbol per byte (skips simulation)")
    p.add_argument("--alphabet", type=int, help="alphabet size of --symbols when it has no .hdr sidecar")
    p.add_argument("--method", choices=[*ESTIMATORS, "all"])
    p.add_argument("--dataset", type=int, help="orbit length")
    p.add_argument("--repeats", type=int)
    p.add_argument("--min-length", dest="min_length", type=int)
    p.add_argument("--max-length", dest="max_length", type=int)
    p.add_argument("--lengths", type=int, help="number of log-spaced window lengths")
    p.add_argument("--out", help="CSV of per-window estimates")

    p = sub.add_parser("train", help="train learned partitions over seeded trials")
    _common(p)
    _map_flags(p)
    p.add_argument("--experiment", choices=["fig2", "fig3", "fig3_ref_sweep", "fig3_slow_anneal"])
    p.add_argument("--L", type=int, help="single window length (fig2: restricts the L sweep)")
    p.add_argument("--ref-index", dest="ref_index", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--parallel", type=int, help="worker processes")
    p.add_argument("--anneal", type=float, help="annealing-rate multiplier (0.5 = twice as many steps)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--steps", type=int, help="base annealing steps")
    p.add_argument("--eval-length", dest="eval_length", type=int)
    p.add_argument("--protocol-dataset", dest="protocol_dataset", type=int)
    p.add_argument("--no-protocol", dest="full_protocol", action="store_const", const=False)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("iterate", help="colored clouds of a partition's forward and backward iterates")
    _common(p)
    _map_flags(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--partition")
    src.add_argument("--threshold")
    p.add_argument("--k-min", dest="k_min", type=int)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("random-partitions", help="H(U) and entropy rate of the random-network partitions")
    _common(p)
    _map_flags(p)
    p.add_argument("--samples-per-config", dest="samples_per_config", type=int)
    p.add_argument("--method", choices=["fast", "protocol"])
    p.add_argument("--eval-length", dest="eval_length", type=int)
    p.add_argument("--dataset", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", help="CSV path")
    return ap


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in INT_KEYS:
            return int(float(value)) if "e" in value.lower() else int(value)
        if key in FLOAT_KEYS:
            return float(value)
        if key in BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError
            return value.lower() in ("true", "1")
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {value!r}") from None
    return value


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise UsageError(f"cannot read config: {e}") from None
        try:
            file_cfg = parse_kv(text)
        except ValueError as e:
            raise UsageError(f"{args.config}: {e}") from None
        command = file_cfg.pop("command", args.command)
        if command != args.command:
            raise UsageError(f"{args.config} is a config for {command!r}, not {args.command!r}")
        unknown = sorted(set(file_cfg) - set(vars(args)) - set(cfg))
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
        cfg.update(file_cfg)
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose") or v is None:
            continue
        cfg[k] = v
    return {k: _coerce(k, v) for k, v in cfg.items()}


def _map(cfg: dict):
    return map_from_name(cfg["map"], **{k: cfg.get(k) for k in MAP_KEYS[1:]})


def _partition(cfg: dict, m):
    if cfg.get("partition"):
        return load_partition(cfg["partition"])
    if cfg.get("threshold"):
        bounds = [float(v) for v in str(cfg["threshold"]).split(",")]
        return ThresholdPartition(bounds)
    raise UsageError("need --partition FILE, --threshold B[,B...] or --symbols FILE")


def _echo(cfg: dict, command: str, path: Path) -> None:
    atomic_write(path, format_kv({"command": command, **{k: v for k, v in cfg.items() if v is not None}}))


def cmd_simulate(cfg: dict) -> int:
    m = _map(cfg)
    x0 = None
    if cfg.get("x0"):
        x0 = [float(v) for v in str(cfg["x0"]).split(",")]
    t = generate_trajectory(m, x0=x0, n=cfg["n"], burn_in=cfg["burn_in"], seed=cfg["seed"])
    out = Path(cfg.get("out") or f"{m.name}.bin")
    write_trajectory(t, out)
    _echo(cfg, "simulate", Path(str(out) + ".config"))
    lo, hi = t.states.min(axis=0), t.states.max(axis=0)
    print(f"wrote {len(t)} states of {m.name} to {out}")
    print("bounding box: " + " x ".join(f"[{a:.4f}, {b:.4f}]" for a, b in zip(lo, hi)))
    return 0


def cmd_estimate(cfg: dict) -> int:
    from .experiments import certify, certify_sequence, rows_to_csv

    if cfg["method"] not in (*ESTIMATORS, "all"):
        raise UsageError(f"unknown method {cfg['method']!r}; valid methods: {', '.join([*ESTIMATORS, 'all'])}")
    methods = list(ESTIMATORS) if cfg["method"] == "all" else [cfg["method"]]
    if cfg.get("symbols"):
        seq = read_symbols(cfg["symbols"], cfg.get("alphabet"))
        lengths = log_lengths(cfg["min_length"], min(cfg["max_length"], len(seq)), cfg["lengths"])
        table = certify_sequence(seq, methods, cfg["seed"], lengths, cfg["repeats"])
    else:
        m = _map(cfg)
        p = _partition(cfg, m)
        hi = min(cfg["max_length"], cfg["dataset"])
        lengths = log_lengths(cfg["min_length"], hi, cfg["lengths"])
        table = certify(p, m, methods, cfg["dataset"], cfg["seed"], lengths, cfg["repeats"])
    print(f"H(U) = {table.H_U:.4f} bits")
    failed = False
    for method, fit in table.fits.items():
        if fit is None:
            print(f"[{method}] scaling fit did not converge", file=sys.stderr)
            failed = True
            continue
        print(f"[{method}] h_inf = {fit.h_inf:.4f} ± {fit.stderr_h_inf:.4f} bits/iter "
              f"(c = {fit.c:.4g}, gamma = {fit.gamma:.4g})")
    if cfg.get("out"):
        out = Path(cfg["out"])
        atomic_write(out, rows_to_csv(table.rows(), cfg))
        _echo(cfg, "estimate", Path(str(out) + ".config"))
    return EXIT_NUMERIC if failed else 0


def cmd_train(cfg: dict) -> int:
    from .experiments import reproduce_experiment

    m = _map(cfg)
    kind = cfg["experiment"]
    if kind == "fig3":
        kind = "fig3_ref_sweep"
    base = TrainerConfig(map=m, batch_size=cfg["batch_size"], base_steps=cfg["steps"],
                         anneal_multiplier=cfg["anneal"], L=cfg.get("L") or 12)
    L_values = tuple(range(1, 13))
    if kind == "fig2" and cfg.get("L"):
        L_values = (cfg["L"],)
    if cfg.get("ref_index") is not None:
        raise UsageError("--ref-index is chosen by the experiment (fig2: L//2, fig3: swept)")
    out = Path(cfg.get("out") or f"run_{kind}_{m.name}")
    try:
        res = reproduce_experiment(kind, m, trials=cfg["trials"], seed=cfg["seed"], base=base,
                                   L_values=L_values, parallel=cfg["parallel"],
                                   full_protocol=cfg["full_protocol"], protocol_dataset=cfg["protocol_dataset"],
                                   eval_length=cfg["eval_length"], out_dir=out)
    except TrainingDiverged as e:
        snap = out / "diverged_snapshot.txt"
        atomic_write(snap, format_kv(e.snapshot))
        e.snapshot = {**e.snapshot, "path": str(snap)}
        raise
    _echo(cfg, "train", out / "config.txt")
    print(f"h_KS = {res.h_ks:.4f} bits/iter")
    for g, o in sorted(res.best.items()):
        c = o.spec.config
        fit = res.best_fit.get(g)
        msg = f"L={c.L} ref={c.ref_index}: best trial {o.spec.trial} h_fast={o.h_fast:.4f}"
        if fit is not None:
            msg += f" h_inf={fit.h_inf:.4f} ± {fit.stderr_h_inf:.4f}"
        print(msg)
    print(f"wrote {out}")
    return 0


def cmd_iterate(cfg: dict) -> int:
    m = _map(cfg)
    p = _partition(cfg, m)
    if cfg["k_min"] > cfg["k_max"]:
        raise UsageError("k_min must not exceed k_max")
    t = generate_trajectory(m, n=cfg["n"], burn_in=cfg["burn_in"])
    labels = symbolize(p, t)
    out = Path(cfg.get("out") or f"iterates_{m.name}")
    out.mkdir(parents=True, exist_ok=True)
    for k in range(cfg["k_min"], cfg["k_max"] + 1):
        cloud = shift_coloring(t, labels, k)
        path = out / f"cloud_k{k:+d}.csv"
        tmp = path.with_name("." + path.name + ".tmp")
        cloud.to_csv(tmp)
        tmp.replace(path)
    _echo(cfg, "iterate", out / "config.txt")
    print(f"wrote {cfg['k_max'] - cfg['k_min'] + 1} clouds to {out}")
    return 0


def cmd_random_partitions(cfg: dict) -> int:
    from .experiments import random_partition_scan, rows_to_csv

    m = _map(cfg)
    rows = random_partition_scan(m, seed=cfg["seed"], samples_per_config=cfg["samples_per_config"],
                                 method=cfg["method"], eval_length=cfg["eval_length"],
                                 dataset_size=cfg["dataset"], repeats=cfg["repeats"])
    h_ks = lyapunov_spectrum(m, 1_000_000, seed=0).h_ks
    out = Path(cfg.get("out") or f"random_partitions_{m.name}.csv")
    atomic_write(out, rows_to_csv(rows, cfg))
    _echo(cfg, "random-partitions", Path(str(out) + ".config"))
    worst = max(r["h_inf_bits"] - min(r["H_U_bits"], h_ks) for r in rows)
    print(f"{len(rows)} partitions; h_KS = {h_ks:.4f}; max h_inf - min(H(U), h_KS) = {worst:+.4f} bits")
    print(f"wrote {out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "train": cmd_train, "iterate": cmd_iterate,
            "random-partitions": cmd_random_partitions}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (EscapeError, ScalingFitError, TrainingDiverged, FloatingPointError) as e:
        print(f"{parser.prog} {args.command}: numeric failure: {e}", file=sys.stderr)
        snap = getattr(e, "snapshot", None)
        if snap:
            print("snapshot: " + ", ".join(f"{k}={v}" for k, v in snap.items()), file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
