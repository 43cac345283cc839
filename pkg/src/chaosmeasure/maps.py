"""Chaotic maps, trajectories over the invariant measure, and Lyapunov spectra."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Sequence, Union

import numba
import numpy as np

__all__ = [
    "Logistic",
    "Henon",
    "Ikeda",
    "MapSpec",
    "Trajectory",
    "LyapunovSpectrum",
    "InvalidStateError",
    "EscapeError",
    "step",
    "jacobian",
    "generate_trajectory",
    "lyapunov_spectrum",
    "map_from_name",
    "DEFAULT_BURN_IN",
    "ESCAPE_RADIUS",
]

DEFAULT_BURN_IN = 1000
ESCAPE_RADIUS = 1e6

_LOGISTIC, _HENON, _IKEDA = 0, 1, 2


class InvalidStateError(ValueError):
    """A state with non-finite coordinates was handed to a map."""


class EscapeError(RuntimeError):
    """The orbit left the escape radius; ``iteration`` counts from the first burn-in step."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = int(iteration)
        super().__init__(message or f"trajectory escaped |x| > {ESCAPE_RADIUS:g} at iteration {iteration}")


@dataclass(frozen=True)
class Logistic:
    r: float = 3.7115

    name: ClassVar[str] = "logistic"
    dim: ClassVar[int] = 1
    kind: ClassVar[int] = _LOGISTIC

    def __post_init__(self):
        if not (0.0 < self.r <= 4.0):
            raise ValueError(f"logistic map requires 0 < r <= 4, got r={self.r}")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.r, 0.0, 0.0, 0.0])

    @property
    def default_x0(self) -> np.ndarray:
        return np.array([0.3])

    def as_dict(self) -> dict:
        return {"map": self.name, "r": self.r}


@dataclass(frozen=True)
class Henon:
    a: float = 1.4
    b: float = 0.3

    name: ClassVar[str] = "henon"
    dim: ClassVar[int] = 2
    kind: ClassVar[int] = _HENON

    def __post_init__(self):
        if self.b == 0.0:
            raise ValueError("Henon map requires b != 0 (invertibility)")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, 0.0, 0.0])

    @property
    def default_x0(self) -> np.ndarray:
        return np.array([0.1, 0.1])

    def as_dict(self) -> dict:
        return {"map": self.name, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Ikeda:
    a: float = 1.0
    b: float = 0.9
    kappa: float = 0.4
    eta: float = 6.0

    name: ClassVar[str] = "ikeda"
    dim: ClassVar[int] = 2
    kind: ClassVar[int] = _IKEDA

    def __post_init__(self):
        if self.b == 0.0:
            raise ValueError("Ikeda map requires b != 0 (invertibility)")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, self.kappa, self.eta])

    @property
    def default_x0(self) -> np.ndarray:
        return np.array([0.1, 0.0])

    def as_dict(self) -> dict:
        return {"map": self.name, "a": self.a, "b": self.b, "kappa": self.kappa, "eta": self.eta}


MapSpec = Union[Logistic, Henon, Ikeda]

_MAP_CLASSES = {"logistic": Logistic, "henon": Henon, "ikeda": Ikeda}


def map_from_name(name: str, **params) -> MapSpec:
    """Build a map from its name; unspecified parameters take the standard values."""
    try:
        cls = _MAP_CLASSES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown map {name!r}; expected one of {sorted(_MAP_CLASSES)}") from None
    params = {k: float(v) for k, v in params.items() if v is not None}
    return cls(**params)


# Numba kernels. The arithmetic below is written in the same order as the
# pure-Python `step` so that compiled and interpreted iterates agree bit-for-bit.

@numba.njit(cache=True)
def _step_into(kind, p, x, out):
    if kind == 0:
        out[0] = p[0] * x[0] * (1.0 - x[0])
    elif kind == 1:
        x0 = x[0]
        out[0] = 1.0 - p[0] * x0 * x0 + p[1] * x[1]
        out[1] = x0
    else:
        x0 = x[0]
        y0 = x[1]
        phi = p[2] - p[3] / (1.0 + x0 * x0 + y0 * y0)
        c = math.cos(phi)
        s = math.sin(phi)
        out[0] = p[0] + p[1] * (x0 * c - y0 * s)
        out[1] = p[1] * (x0 * s + y0 * c)


@numba.njit(cache=True)
def _jacobian_into(kind, p, x, J):
    if kind == 0:
        J[0, 0] = p[0] * (1.0 - 2.0 * x[0])
    elif kind == 1:
        J[0, 0] = -2.0 * p[0] * x[0]
        J[0, 1] = p[1]
        J[1, 0] = 1.0
        J[1, 1] = 0.0
    else:
        x0 = x[0]
        y0 = x[1]
        rho = 1.0 + x0 * x0 + y0 * y0
        phi = p[2] - p[3] / rho
        c = math.cos(phi)
        s = math.sin(phi)
        # d(phi)/dx = 2 eta x / rho^2
        k = 2.0 * p[3] / (rho * rho)
        dphx = k * x0
        dphy = k * y0
        # rotated coordinates before scaling by b
        u = x0 * c - y0 * s
        v = x0 * s + y0 * c
        J[0, 0] = p[1] * (c - v * dphx)
        J[0, 1] = p[1] * (-s - v * dphy)
        J[1, 0] = p[1] * (s + u * dphx)
        J[1, 1] = p[1] * (c + u * dphy)


@numba.njit(cache=True)
def _iterate(kind, p, x0, n, burn_in, out):
    """Fill ``out`` (n x d) with iterates after ``burn_in`` steps.

    Returns -1 on success or the index of the first escaping iteration.
    """
    d = x0.shape[0]
    x = x0.copy()
    nxt = np.empty(d)
    for i in range(burn_in):
        _step_into(kind, p, x, nxt)
        for j in range(d):
            if not abs(nxt[j]) <= 1e6:
                return i + 1
            x[j] = nxt[j]
    for j in range(d):
        out[0, j] = x[j]
    for i in range(1, n):
        _step_into(kind, p, x, nxt)
        for j in range(d):
            if not abs(nxt[j]) <= 1e6:
                return burn_in + i
            x[j] = nxt[j]
            out[i, j] = x[j]
    return -1


@numba.njit(cache=True)
def _lyapunov_sums(kind, p, x0, q0, n, burn_in):
    """Tangent-space iteration with Gram-Schmidt every step; returns (log-stretch sums in nats, status)."""
    d = x0.shape[0]
    x = x0.copy()
    nxt = np.empty(d)
    for i in range(burn_in):
        _step_into(kind, p, x, nxt)
        for j in range(d):
            if not abs(nxt[j]) <= 1e6:
                return np.zeros(d), i + 1
            x[j] = nxt[j]
    J = np.zeros((d, d))
    Q = q0.copy()
    W = np.empty((d, d))
    sums = np.zeros(d)
    for i in range(n):
        _jacobian_into(kind, p, x, J)
        # W = J @ Q, columns are the propagated tangent vectors
        for r in range(d):
            for c in range(d):
                acc = 0.0
                for k in range(d):
                    acc += J[r, k] * Q[k, c]
                W[r, c] = acc
        for c in range(d):
            for prev in range(c):
                dot = 0.0
                for r in range(d):
                    dot += W[r, c] * Q[r, prev]
                for r in range(d):
                    W[r, c] -= dot * Q[r, prev]
            nrm = 0.0
            for r in range(d):
                nrm += W[r, c] * W[r, c]
            nrm = math.sqrt(nrm)
            sums[c] += math.log(nrm)
            for r in range(d):
                Q[r, c] = W[r, c] / nrm
        _step_into(kind, p, x, nxt)
        for j in range(d):
            if not abs(nxt[j]) <= 1e6:
                return sums, burn_in + i + 1
            x[j] = nxt[j]
    return sums, -1


def _as_state(m: MapSpec, x) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1 or arr.shape[0] != m.dim:
        raise ValueError(f"{m.name} map expects a state of dimension {m.dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"non-finite state {arr!r}")
    return arr


def step(m: MapSpec, x) -> np.ndarray:
    """Apply the map once."""
    x = _as_state(m, x)
    if isinstance(m, Logistic):
        return np.array([m.r * x[0] * (1.0 - x[0])])
    if isinstance(m, Henon):
        return np.array([1.0 - m.a * x[0] * x[0] + m.b * x[1], x[0]])
    x0, y0 = float(x[0]), float(x[1])
    phi = m.kappa - m.eta / (1.0 + x0 * x0 + y0 * y0)
    c, s = math.cos(phi), math.sin(phi)
    return np.array([m.a + m.b * (x0 * c - y0 * s), m.b * (x0 * s + y0 * c)])


def jacobian(m: MapSpec, x) -> np.ndarray:
    """Analytic Jacobian of the map at ``x`` (d x d)."""
    x = _as_state(m, x)
    J = np.zeros((m.dim, m.dim))
    _jacobian_into(m.kind, m.params, x, J)
    return J


@dataclass
class Trajectory:
    states: np.ndarray
    map: MapSpec
    seed: int = 0
    burn_in: int = DEFAULT_BURN_IN
    x0: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def header(self) -> dict:
        h = dict(self.map.as_dict())
        h.update(seed=self.seed, burn_in=self.burn_in, n=len(self), dim=self.dim)
        if self.x0 is not None:
            h["x0"] = ",".join(repr(float(v)) for v in self.x0)
        return h


def generate_trajectory(
    m: MapSpec,
    x0: Sequence[float] | np.ndarray | None = None,
    n: int = 1,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int = 0,
) -> Trajectory:
    """Iterate ``m`` from ``x0``, drop ``burn_in`` iterates and record ``n`` states.

    ``seed`` is bookkeeping only: the orbit is a deterministic function of
    ``(m, x0, n, burn_in)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    x0 = m.default_x0 if x0 is None else _as_state(m, x0)
    out = np.empty((n, m.dim))
    status = _iterate(m.kind, m.params, x0, n, burn_in, out)
    if status >= 0:
        raise EscapeError(status)
    return Trajectory(states=out, map=m, seed=seed, burn_in=burn_in, x0=np.array(x0))


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: tuple[float, ...]
    n_iterations: int

    @property
    def h_ks(self) -> float:
        return float(sum(max(e, 0.0) for e in self.exponents))


def lyapunov_spectrum(
    m: MapSpec,
    n: int = 1_000_000,
    seed: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> LyapunovSpectrum:
    """Lyapunov exponents in bits/iteration, sorted descending.

    ``seed`` jitters the default initial condition by at most 1e-3 per
    coordinate and draws a random orthonormal starting tangent frame.
    """
    rng = np.random.default_rng(seed)
    x0 = m.default_x0 + rng.uniform(-1e-3, 1e-3, size=m.dim)
    q0, _ = np.linalg.qr(rng.standard_normal((m.dim, m.dim)))
    sums, status = _lyapunov_sums(m.kind, m.params, x0, np.ascontiguousarray(q0), n, burn_in)
    if status >= 0:
        raise EscapeError(status)
    exps = sorted((float(s) / n / math.log(2.0) for s in sums), reverse=True)
    return LyapunovSpectrum(exponents=tuple(exps), n_iterations=n)
