"""On-disk formats: trajectories, symbol files, key=value configs and CSV headers."""
from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .maps import Trajectory, map_from_name
from .partitions import SymbolSequence

_MAP_KEYS = {"logistic": ("r",), "henon": ("a", "b"), "ikeda": ("a", "b", "kappa", "eta")}


def header_path(path) -> Path:
    return Path(str(path) + ".hdr")


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k}={'' if v is None else v}\n" for k, v in d.items())


def config_hash(d: dict) -> str:
    return hashlib.sha256(format_kv(dict(sorted(d.items()))).encode()).hexdigest()[:16]


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# settings that do not change results stay out of the config hash
NON_RESULT_KEYS = frozenset({"out", "out_dir", "parallel", "verbose", "config"})


def csv_preamble(config: dict) -> str:
    kept = {k: str(v) for k, v in config.items() if k not in NON_RESULT_KEYS}
    return f"# chaosmeasure {__version__} config_hash={config_hash(kept)}\n"


def write_trajectory(t: Trajectory, path) -> None:
    """Little-endian float64, row-major (n x d), plus a ``.hdr`` sidecar."""
    atomic_write(path, np.ascontiguousarray(t.states, dtype="<f8").tobytes())
    atomic_write(header_path(path), format_kv(t.header()))


def read_trajectory(path) -> Trajectory:
    hdr = parse_kv(header_path(path).read_text())
    m = map_from_name(hdr["map"], **{k: hdr[k] for k in _MAP_KEYS[hdr["map"]]})
    n, d = int(hdr["n"]), int(hdr["dim"])
    states = np.fromfile(path, dtype="<f8")
    if states.size != n * d:
        raise ValueError(f"{path}: expected {n * d} values, found {states.size}")
    x0 = np.array([float(v) for v in hdr["x0"].split(",")]) if "x0" in hdr else None
    return Trajectory(states.reshape(n, d).astype(np.float64), m, int(hdr["seed"]), int(hdr["burn_in"]), x0)


def write_symbols(s: SymbolSequence, path) -> None:
    if s.alphabet_size > 256:
        raise ValueError("byte symbol files hold alphabets of at most 256 symbols")
    atomic_write(path, s.symbols.astype(np.uint8).tobytes())
    atomic_write(header_path(path), format_kv({"alphabet_size": s.alphabet_size, "n": len(s)}))


def read_symbols(path, alphabet_size: int | None = None) -> SymbolSequence:
    """One symbol per byte. The alphabet comes from the argument or the ``.hdr`` sidecar."""
    data = np.fromfile(path, dtype=np.uint8)
    if alphabet_size is None:
        hp = header_path(path)
        if not hp.exists():
            raise ValueError(f"{path}: alphabet size not declared (no {hp.name} and no explicit value)")
        alphabet_size = int(parse_kv(hp.read_text())["alphabet_size"])
    return SymbolSequence(data, int(alphabet_size))
