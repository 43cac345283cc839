"""Distributed information bottleneck training of binary measurements.

Every state of a length-L window goes through the same two-stage encoder
(Gaussian bottleneck, then a soft quantizer). The L soft symbols are
concatenated and embedded by a predictor; a reference state from the same
window is embedded separately, and InfoNCE ties the two embeddings together.
The bottleneck is penalized by the squared KL to a standard normal prior,
with a weight annealed geometrically from ``beta_start`` to ``beta_end``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from . import maps as maps_mod
from .maps import MapSpec, generate_trajectory
from .nn import (
    LOGVAR_CLAMP,
    Adam,
    DenseNet,
    gaussian_kl,
    gaussian_kl_grad,
    infonce_loss,
    positional_encode,
    softmax_grad,
    tempered_softmax,
)
from .partitions import NeuralPartition

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    map: MapSpec = field(default_factory=maps_mod.Ikeda)
    L: int = 12
    ref_index: int | None = None
    batch_size: int = 2048
    beta_start: float = 10.0
    beta_end: float = 1e-4
    base_steps: int = 20_000
    anneal_multiplier: float = 1.0
    learning_rate: float = 3e-4
    stop_threshold_bits: float = 1.0
    stop_window: int = 100
    seed: int = 0
    training_pool_length: int = 1_000_000
    bottleneck_dim: int = 8
    alphabet_size: int = 2
    encoder_hidden: tuple[int, ...] = (128, 128)
    quantizer_hidden: tuple[int, ...] = (128, 128)
    predictor_hidden: tuple[int, ...] = (256, 256)
    reference_hidden: tuple[int, ...] = (256, 256)
    embed_dim: int = 32
    mi_batch: int = 512
    harden_noise: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.ref_index is None:
            self.ref_index = self.L // 2
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not 0 <= self.ref_index < self.L:
            raise ValueError(f"ref_index must lie in [0, {self.L - 1}]")
        if not self.beta_start > self.beta_end > 0:
            raise ValueError("need beta_start > beta_end > 0")
        if self.anneal_multiplier <= 0:
            raise ValueError("anneal_multiplier must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    @property
    def total_steps(self) -> int:
        return int(round(self.base_steps / self.anneal_multiplier))

    def echo(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "map":
                for k, val in v.as_dict().items():
                    d[k] = val
            elif isinstance(v, tuple):
                d[f.name] = ",".join(str(x) for x in v)
            else:
                d[f.name] = v
        return d


def beta_at(config: TrainerConfig, step: int) -> float:
    """Geometric interpolation from ``beta_start`` (step 0) to ``beta_end`` (last step)."""
    total = config.total_steps
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside schedule [0, {total}]")
    return config.beta_start * (config.beta_end / config.beta_start) ** (step / total)


@dataclass
class MiEstimate:
    lower_bits: float
    upper_bits: float


def _log_density_matrix(mean, logvar, samples):
    """``out[i, j] = log N(samples_i; mean_j, diag(exp(logvar_j)))``."""
    mean = np.asarray(mean, np.float64)
    logvar = np.asarray(logvar, np.float64)
    u = np.asarray(samples, np.float64)
    prec = np.exp(-logvar)
    quad = (u * u) @ prec.T - 2.0 * u @ (mean * prec).T + np.sum(mean * mean * prec, axis=1)[None, :]
    k = mean.shape[1]
    return -0.5 * (quad + np.sum(logvar, axis=1)[None, :] + k * math.log(2 * math.pi))


def _logsumexp(a, axis):
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.log(np.sum(np.exp(a - mx), axis=axis)) + np.squeeze(mx, axis=axis)


def mi_bounds(mean: np.ndarray, logvar: np.ndarray, samples: np.ndarray) -> MiEstimate:
    """Minibatch bounds on I(U~; X) in bits from a batch of Gaussian posteriors.

    The lower bound compares each sample's own density against the batch
    mixture; the upper bound leaves the sample's own component out of the mixture.
    """
    B = mean.shape[0]
    if B < 2:
        raise ValueError("MI bounds need a batch of at least 2")
    lp = _log_density_matrix(mean, logvar, samples)
    own = np.diag(lp).copy()
    lower = np.mean(own - (_logsumexp(lp, 1) - math.log(B)))
    loo = lp.copy()
    np.fill_diagonal(loo, -np.inf)
    upper = np.mean(own - (_logsumexp(loo, 1) - math.log(B - 1)))
    return MiEstimate(float(lower / math.log(2)), float(upper / math.log(2)))


@dataclass
class TrainerState:
    config: TrainerConfig
    encoder: DenseNet
    quantizer: DenseNet
    predictor: DenseNet
    reference: DenseNet
    optimizer: Adam
    step: int = 0
    mi_history: list = field(default_factory=list)

    @property
    def networks(self) -> list[DenseNet]:
        return [self.encoder, self.quantizer, self.predictor, self.reference]


def init_state(config: TrainerConfig, rng: np.random.Generator | None = None) -> TrainerState:
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    dt = np.dtype(config.dtype)
    d = config.map.dim
    k = config.bottleneck_dim
    leaky = "leaky_relu"

    def mlp(sizes):
        return DenseNet.init(sizes, [leaky] * (len(sizes) - 2) + ["linear"], rng, dt)

    enc = mlp([11 * d, *config.encoder_hidden, 2 * k])
    quant = mlp([k, *config.quantizer_hidden, config.alphabet_size])
    pred = mlp([config.alphabet_size * config.L, *config.predictor_hidden, config.embed_dim])
    ref = mlp([11 * d, *config.reference_hidden, config.embed_dim])
    params = enc.params() + quant.params() + pred.params() + ref.params()
    opt = Adam(params, lr=config.learning_rate)
    return TrainerState(config, enc, quant, pred, ref, opt)


def sample_batch(pool: np.ndarray, L: int, ref_index: int, batch: int, rng: np.random.Generator):
    """Random contiguous windows (with replacement) and their reference states."""
    starts = rng.integers(0, pool.shape[0] - L + 1, size=batch)
    windows = pool[starts[:, None] + np.arange(L)[None, :]]
    return windows, windows[:, ref_index]


@dataclass
class StepResult:
    loss: float
    infonce: float
    kl_mean: float
    penalty: float
    mi: MiEstimate | None
    grads: list | None = None


def loss_and_grads(state: TrainerState, windows: np.ndarray, ref: np.ndarray, beta: float,
                   noise: np.ndarray, mi_rows: int = 0) -> StepResult:
    """Forward and backward pass of the training objective; gradients follow ``optimizer.params`` order."""
    cfg = state.config
    dt = state.encoder.dtype
    B, L, d = windows.shape
    k = cfg.bottleneck_dim
    X = windows.reshape(B * L, d)

    enc_out = state.encoder.forward(positional_encode(X, dt))
    mean = enc_out[:, :k]
    raw_lv = enc_out[:, k:]
    logvar = np.clip(raw_lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    std = np.exp(0.5 * logvar)
    noise = noise.astype(dt, copy=False).reshape(B * L, k)
    sample = mean + std * noise

    logits = state.quantizer.forward(sample)
    soft = tempered_softmax(logits, 1.0)
    m = soft.shape[1]
    q = state.predictor.forward(soft.reshape(B, L * m))
    key = state.reference.forward(positional_encode(ref, dt))
    nce, dq, dk = infonce_loss(q, key)

    kl = gaussian_kl(mean, logvar).reshape(B, L)
    kl_pos = kl.mean(axis=0)
    penalty = float(beta * np.sum(kl_pos.astype(np.float64) ** 2))

    mi = None
    if mi_rows:
        idx = np.arange(0, B * L, L)[:mi_rows]
        mi = mi_bounds(mean[idx], logvar[idx], sample[idx])

    # backward
    dsoft, g_pred = state.predictor.backward(dq)
    _, g_ref = state.reference.backward(dk)
    dlogits = softmax_grad(soft, dsoft.reshape(B * L, m))
    dsample, g_quant = state.quantizer.backward(dlogits)
    dmean = dsample.copy()
    dlogvar = dsample * (0.5 * std * noise)
    dkl = np.broadcast_to((2.0 * beta / B) * kl_pos[None, :], (B, L)).reshape(B * L).astype(dt)
    gm, gl = gaussian_kl_grad(mean, logvar, dkl)
    dmean += gm
    dlogvar += gl
    dlogvar *= (np.abs(raw_lv) <= LOGVAR_CLAMP)
    _, g_enc = state.encoder.backward(np.concatenate([dmean, dlogvar], axis=1))

    return StepResult(
        loss=float(nce) + penalty,
        infonce=float(nce),
        kl_mean=float(kl_pos.mean()),
        penalty=penalty,
        mi=mi,
        grads=g_enc + g_quant + g_pred + g_ref,
    )


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: dict):
        super().__init__(message)
        self.snapshot = snapshot


def training_step(state: TrainerState, windows: np.ndarray, ref: np.ndarray, beta: float,
                  rng: np.random.Generator) -> StepResult:
    """One joint Adam step on all four networks."""
    cfg = state.config
    B, L, _ = windows.shape
    noise = rng.standard_normal((B * L, cfg.bottleneck_dim), dtype=np.float32)
    res = loss_and_grads(state, windows, ref, beta, noise, mi_rows=min(cfg.mi_batch, B))
    if not np.isfinite(res.loss):
        raise TrainingDiverged(
            f"non-finite loss at step {state.step}",
            {"step": state.step, "beta": beta, "infonce": res.infonce, "kl_mean": res.kl_mean},
        )
    state.optimizer.step(res.grads)
    res.grads = None
    state.step += 1
    return res


@dataclass
class TrainingRun:
    config: TrainerConfig
    curves: dict
    partition: NeuralPartition
    stop_reason: str
    steps: int
    wall_clock: float
    state: TrainerState | None = field(default=None, repr=False)

    def curves_csv(self) -> str:
        cols = ["step", "beta", "infonce_nats", "kl_nats_mean", "mi_lower_bits", "mi_upper_bits"]
        lines = [",".join(cols)]
        for row in zip(*(self.curves[c] for c in cols)):
            lines.append(",".join(str(int(row[0])) if i == 0 else repr(float(v)) for i, v in enumerate(row)))
        return "\n".join(lines) + "\n"


def harden(state: TrainerState, noise_count: int = 32, rng: np.random.Generator | None = None,
           seed: int | None = None) -> NeuralPartition:
    """Freeze the encoder and quantizer into a deterministic majority-vote partition."""
    if noise_count < 1:
        raise ValueError("noise_count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(seed)
    noise = rng.standard_normal((noise_count, state.config.bottleneck_dim))
    return NeuralPartition(state.encoder, state.quantizer, noise, input_dim=state.config.map.dim,
                           seed=state.config.seed)


def _seeds(seed: int) -> dict[str, np.random.Generator]:
    names = ["init", "pool", "batch", "noise", "harden"]
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(len(names)))}


def training_pool(config: TrainerConfig, rng: np.random.Generator) -> np.ndarray:
    m = config.map
    x0 = m.default_x0 + rng.uniform(-1e-3, 1e-3, size=m.dim)
    return generate_trajectory(m, x0=x0, n=config.training_pool_length).states


def train(config: TrainerConfig, beta_fn: Callable[[int], float] | None = None,
          keep_state: bool = False, progress_every: int = 0) -> TrainingRun:
    """Anneal beta over the schedule; stop once the running mean of the MI lower bound crosses the threshold."""
    t0 = time.perf_counter()
    rngs = _seeds(config.seed)
    state = init_state(config, rngs["init"])
    pool = training_pool(config, rngs["pool"])
    curves = {c: [] for c in ["step", "beta", "infonce_nats", "kl_nats_mean", "mi_lower_bits", "mi_upper_bits"]}
    stop_reason = "schedule_end"
    window: list[float] = []
    for step in range(config.total_steps):
        beta = beta_fn(step) if beta_fn is not None else beta_at(config, step)
        windows, ref = sample_batch(pool, config.L, config.ref_index, config.batch_size, rngs["batch"])
        res = training_step(state, windows, ref, beta, rngs["noise"])
        curves["step"].append(step)
        curves["beta"].append(beta)
        curves["infonce_nats"].append(res.infonce)
        curves["kl_nats_mean"].append(res.kl_mean)
        curves["mi_lower_bits"].append(res.mi.lower_bits)
        curves["mi_upper_bits"].append(res.mi.upper_bits)
        window.append(res.mi.lower_bits)
        if len(window) > config.stop_window:
            window.pop(0)
        if progress_every and step % progress_every == 0:
            log.info("step %d beta %.3g infonce %.4f kl %.4f mi [%.3f, %.3f]", step, beta, res.infonce,
                     res.kl_mean, res.mi.lower_bits, res.mi.upper_bits)
        if len(window) == config.stop_window and np.mean(window) >= config.stop_threshold_bits:
            stop_reason = "mi_threshold"
            break
    part = harden(state, config.harden_noise, rngs["harden"])
    return TrainingRun(config, curves, part, stop_reason, state.step, time.perf_counter() - t0,
                       state if keep_state else None)
