"""Deterministic measurements of map states and the symbol sequences they produce."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .maps import Trajectory
from .nn import DenseNet, positional_encode, split_posterior

PARTITION_FORMAT_VERSION = 1

__all__ = [
    "SymbolSequence",
    "Partition",
    "ThresholdPartition",
    "RandomMlpSpec",
    "RandomMlpPartition",
    "NeuralPartition",
    "ColoredCloud",
    "apply",
    "symbolize",
    "measurement_entropy",
    "shift_coloring",
    "sample_random_partitions",
    "save_partition",
    "load_partition",
    "reference_partition",
]


@dataclass
class SymbolSequence:
    symbols: np.ndarray
    alphabet_size: int

    def __post_init__(self):
        if self.alphabet_size < 1:
            raise ValueError("alphabet_size must be >= 1")
        dtype = np.uint8 if self.alphabet_size <= 256 else np.int64
        sym = np.asarray(self.symbols)
        if sym.size and (sym.min() < 0 or sym.max() >= self.alphabet_size):
            raise ValueError(f"symbols outside alphabet 0..{self.alphabet_size - 1}")
        self.symbols = sym.astype(dtype, copy=False).ravel()

    def __len__(self) -> int:
        return self.symbols.shape[0]

    def __getitem__(self, item) -> "SymbolSequence":
        return SymbolSequence(self.symbols[item], self.alphabet_size)

    def frequencies(self) -> np.ndarray:
        return np.bincount(self.symbols, minlength=self.alphabet_size) / max(len(self), 1)


class Partition:
    """A total, deterministic map from states to ``{0, ..., alphabet_size - 1}``."""

    alphabet_size: int
    input_dim: int | None = None
    seed: int | None = None

    def apply_batch(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x) -> int:
        return int(self.apply_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0])

    def _check(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[:, None]
        if self.input_dim is not None and states.shape[1] != self.input_dim:
            raise ValueError(f"partition expects states of dimension {self.input_dim}, got {states.shape[1]}")
        return states

    # serialization hooks
    variant: str = ""

    def _params(self) -> tuple[dict, dict]:
        raise NotImplementedError


@dataclass
class ThresholdPartition(Partition):
    """Symbol = number of boundaries strictly below the projected state.

    The projection is coordinate 0 unless ``direction`` gives weights for
    every coordinate (a family of parallel hyperplane cuts).
    """

    boundaries: Sequence[float]
    seed: int | None = None
    direction: Sequence[float] | None = None
    variant = "threshold"

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64).ravel()
        if b.size == 0 or np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be a non-empty strictly increasing sequence")
        self.boundaries = b
        self.alphabet_size = b.size + 1
        if self.direction is not None:
            self.direction = np.asarray(self.direction, dtype=np.float64).ravel()
            self.input_dim = self.direction.size

    def project(self, states) -> np.ndarray:
        states = self._check(states)
        return states[:, 0] if self.direction is None else states @ self.direction

    def apply_batch(self, states) -> np.ndarray:
        return np.searchsorted(self.boundaries, self.project(states), side="left")

    def _params(self):
        arrays = {"boundaries": self.boundaries}
        if self.direction is not None:
            arrays["direction"] = self.direction
        return {}, arrays


@dataclass(frozen=True)
class RandomMlpSpec:
    n_layers: int
    activation: str
    output_dim: int
    units_per_layer: int = 64
    weight_mean: float = 0.05
    weight_std: float = 0.5
    input_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_layers not in (1, 2, 3):
            raise ValueError("n_layers must be 1, 2 or 3")
        if self.activation not in ("relu", "tanh"):
            raise ValueError("activation must be 'relu' or 'tanh'")
        if self.output_dim < 2:
            raise ValueError("output_dim must be >= 2")

    @property
    def label(self) -> str:
        return f"{self.n_layers}x{self.units_per_layer}-{self.activation}-m{self.output_dim}"


@dataclass
class RandomMlpPartition(Partition):
    """Random network; the symbol is the output coordinate of largest magnitude."""

    spec: RandomMlpSpec
    net: DenseNet = None
    variant = "random_mlp"

    def __post_init__(self):
        self.alphabet_size = self.spec.output_dim
        self.input_dim = self.spec.input_dim
        self.seed = self.spec.seed
        if self.net is None:
            s = self.spec
            rng = np.random.default_rng(s.seed)
            sizes = [s.input_dim] + [s.units_per_layer] * s.n_layers + [s.output_dim]
            ws = [rng.normal(s.weight_mean, s.weight_std, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
            bs = [rng.normal(s.weight_mean, s.weight_std, size=b) for b in sizes[1:]]
            self.net = DenseNet(ws, bs, [s.activation] * s.n_layers + ["linear"])

    def apply_batch(self, states) -> np.ndarray:
        states = self._check(states)
        out = []
        for i in range(0, states.shape[0], 1 << 16):
            # argmax returns the lowest index on ties
            out.append(np.argmax(np.abs(self.net(states[i:i + (1 << 16)])), axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def _params(self):
        meta = {k: getattr(self.spec, k) for k in RandomMlpSpec.__dataclass_fields__}
        return meta, self.net.to_arrays("net_")


@dataclass
class NeuralPartition(Partition):
    """Hardened learned measurement.

    Each state is encoded to a Gaussian, shifted by each of the fixed noise
    vectors, pushed through the quantizer at zero temperature, and the
    majority symbol over the noise vectors wins (lowest symbol on ties).
    Inference runs in float64.
    """

    encoder: DenseNet
    quantizer: DenseNet
    noise: np.ndarray
    input_dim: int | None = None
    seed: int | None = None
    chunk: int = 4096
    variant = "neural"

    def __post_init__(self):
        self.encoder = self.encoder.astype(np.float64)
        self.quantizer = self.quantizer.astype(np.float64)
        self.noise = np.atleast_2d(np.asarray(self.noise, dtype=np.float64))
        self.alphabet_size = self.quantizer.out_dim
        if self.input_dim is None:
            self.input_dim = self.encoder.in_dim // 11

    def votes(self, states) -> np.ndarray:
        """Per-state vote counts, shape (n, alphabet_size)."""
        states = self._check(states)
        K, m = self.noise.shape[0], self.alphabet_size
        counts = np.zeros((states.shape[0], m), dtype=np.int64)
        for i in range(0, states.shape[0], self.chunk):
            block = states[i:i + self.chunk]
            mean, logvar = split_posterior(self.encoder(positional_encode(block, np.float64)))
            std = np.exp(0.5 * logvar)
            samples = (mean[:, None, :] + std[:, None, :] * self.noise[None, :, :]).reshape(-1, mean.shape[1])
            sym = np.argmax(self.quantizer(samples), axis=1).reshape(block.shape[0], K)
            for a in range(m):
                counts[i:i + block.shape[0], a] = np.count_nonzero(sym == a, axis=1)
        return counts

    def apply_batch(self, states) -> np.ndarray:
        return np.argmax(self.votes(states), axis=1)

    def _params(self):
        meta = {"encoder": self.encoder.meta(), "quantizer": self.quantizer.meta(), "input_dim": self.input_dim}
        arrays = {**self.encoder.to_arrays("enc_"), **self.quantizer.to_arrays("q_"), "noise": self.noise}
        return meta, arrays


def apply(p: Partition, x) -> int:
    return p.apply(x)


def symbolize(p: Partition, t: Trajectory | np.ndarray) -> SymbolSequence:
    states = t.states if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64)
    if states.shape[0] == 0:
        return SymbolSequence(np.zeros(0, dtype=np.int64), p.alphabet_size)
    return SymbolSequence(p.apply_batch(states), p.alphabet_size)


def measurement_entropy(s: SymbolSequence) -> float:
    """Plug-in entropy of the single-symbol frequencies, in bits."""
    if len(s) == 0:
        raise ValueError("measurement entropy of an empty sequence is undefined")
    p = s.frequencies()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


@dataclass
class ColoredCloud:
    points: np.ndarray
    labels: np.ndarray
    shift: int

    def __post_init__(self):
        if len(self.points) != len(self.labels):
            raise ValueError("points and labels must have equal length")

    def write(self, fh) -> None:
        d = self.points.shape[1]
        cols = ["x", "y"][:d] if d <= 2 else [f"x{i}" for i in range(d)]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols + ["label", "shift"])
        for pt, lab in zip(self.points, self.labels):
            w.writerow([repr(float(v)) for v in pt] + [int(lab), self.shift])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write(fh)


def shift_coloring(t: Trajectory | np.ndarray, labels: SymbolSequence | np.ndarray, k: int) -> ColoredCloud:
    """Pair state ``x_{i+k}`` with label ``u_i``: the k-th image (k > 0) or preimage (k < 0) coloring."""
    states = t.states if isinstance(t, Trajectory) else np.asarray(t)
    lab = labels.symbols if isinstance(labels, SymbolSequence) else np.asarray(labels)
    n = states.shape[0]
    if lab.shape[0] != n:
        raise ValueError("labels must come from symbolizing the same trajectory")
    if abs(k) >= n:
        raise ValueError(f"|shift| = {abs(k)} must be smaller than the trajectory length {n}")
    if k >= 0:
        return ColoredCloud(states[k:], lab[: n - k], k)
    return ColoredCloud(states[: n + k], lab[-k:], k)


RANDOM_LAYERS = (1, 2, 3)
RANDOM_ACTIVATIONS = ("relu", "tanh")
RANDOM_ALPHABETS = (2, 4)


def random_configs() -> list[tuple[int, str, int]]:
    return list(itertools.product(RANDOM_LAYERS, RANDOM_ACTIVATIONS, RANDOM_ALPHABETS))


def sample_random_partitions(
    configs: Iterable[tuple[int, str, int]] | None = None,
    seed: int = 0,
    samples_per_config: int = 20,
    input_dim: int = 2,
) -> list[RandomMlpPartition]:
    """Random-network partitions for every (layers, activation, alphabet) config."""
    configs = random_configs() if configs is None else list(configs)
    children = np.random.SeedSequence(seed).spawn(len(configs) * samples_per_config)
    out = []
    for i, (cfg, _) in enumerate(itertools.product(configs, range(samples_per_config))):
        child_seed = int(children[i].generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
        spec = RandomMlpSpec(n_layers=cfg[0], activation=cfg[1], output_dim=cfg[2],
                             input_dim=input_dim, seed=child_seed)
        out.append(RandomMlpPartition(spec))
    return out


def save_partition(p: Partition, path) -> None:
    meta, arrays = p._params()
    header = {
        "format": "chaosmeasure.partition",
        "version": PARTITION_FORMAT_VERSION,
        "variant": p.variant,
        "alphabet_size": int(p.alphabet_size),
        "seed": p.seed,
        "params": meta,
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_partition(path) -> Partition:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != "chaosmeasure.partition":
            raise ValueError(f"{path} is not a partition file")
        if header["version"] > PARTITION_FORMAT_VERSION:
            raise ValueError(f"unsupported partition format version {header['version']}")
        variant, params = header["variant"], header["params"]
        if variant == "threshold":
            p: Partition = ThresholdPartition(np.array(z["boundaries"]), seed=header["seed"],
                                              direction=np.array(z["direction"]) if "direction" in z else None)
        elif variant == "random_mlp":
            spec = RandomMlpSpec(**params)
            p = RandomMlpPartition(spec, DenseNet.from_arrays(
                {"activations": [spec.activation] * spec.n_layers + ["linear"]}, z, "net_"))
        elif variant == "neural":
            p = NeuralPartition(DenseNet.from_arrays(params["encoder"], z, "enc_"),
                                DenseNet.from_arrays(params["quantizer"], z, "q_"),
                                np.array(z["noise"]), input_dim=params["input_dim"], seed=header["seed"])
        else:
            raise ValueError(f"unknown partition variant {variant!r}")
    if p.alphabet_size != header["alphabet_size"]:
        raise ValueError("alphabet size in header does not match the stored parameters")
    return p


def reference_partition(name: str) -> Partition:
    """Partition files shipped with the package (e.g. ``"henon"``)."""
    ref = resources.files("chaosmeasure") / "data" / f"{name}_generator.npz"
    with resources.as_file(ref) as path:
        return load_partition(Path(path))
