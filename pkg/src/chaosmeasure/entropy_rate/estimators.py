from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..partitions import SymbolSequence
from .block import corrected_block_entropy
from .ctw import ctw_log2_probability
from .lz import cross_parse_phrases


MIN_CTW_LENGTH = 100
# Contexts only grow past this depth on (near-)deterministic stretches, where
# unbounded walks cost O(N^2). On entropy-producing sequences of 2e6 symbols the
# deepest recurring context is well below it, so results match unbounded depth.
DEFAULT_CTW_DEPTH = 256


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    stderr: float
    method: str
    n: int
    warning: str | None = None


def _seq(s, alphabet_size: int | None = None) -> SymbolSequence:
    if isinstance(s, SymbolSequence):
        if alphabet_size is not None and alphabet_size != s.alphabet_size:
            raise ValueError(f"alphabet mismatch: sequence has {s.alphabet_size}, expected {alphabet_size}")
        return s
    if alphabet_size is None:
        raise ValueError("alphabet_size is required for raw symbol arrays")
    return SymbolSequence(np.asarray(s), alphabet_size)


def ctw_entropy_rate(s, alphabet_size: int | None = None,
                     max_depth: int | None = DEFAULT_CTW_DEPTH) -> EntropyEstimate:
    """Code length of the weighted context tree per symbol, in bits.

    ``max_depth=None`` removes the depth limit entirely.
    """
    s = _seq(s, alphabet_size)
    if len(s) < MIN_CTW_LENGTH:
        raise ValueError(f"CTW rate needs at least {MIN_CTW_LENGTH} symbols, got {len(s)}")
    m = max(s.alphabet_size, 2)
    value = -ctw_log2_probability(s.symbols, m, max_depth) / len(s)
    return EntropyEstimate(value, 0.0, "ctw", len(s))


def lz_cross_parse_rate(database, target, alphabet_size: int | None = None) -> EntropyEstimate:
    """Ziv-Merhav cross-parsing rate ``c log2|database| / |target|``."""
    db = _seq(database, alphabet_size)
    tg = _seq(target, alphabet_size if alphabet_size is not None else db.alphabet_size)
    if db.alphabet_size != tg.alphabet_size:
        raise ValueError("database and target must share an alphabet")
    if len(db) == 0 or len(tg) == 0:
        raise ValueError("database and target must be non-empty")
    c = cross_parse_phrases(db.symbols, tg.symbols, max(db.alphabet_size, 2))
    return EntropyEstimate(c * math.log2(len(db)) / len(tg), 0.0, "lz", len(tg))


def block_entropy_rate(s, B: int, alphabet_size: int | None = None) -> EntropyEstimate:
    """``H(B) - H(B-1)`` from bias-corrected block entropies, in bits.

    Flags the estimate when more than a tenth of the windows are distinct
    blocks (the undersampled regime).
    """
    if B < 1:
        raise ValueError("block length must be >= 1")
    s = _seq(s, alphabet_size)
    m = max(s.alphabet_size, 2)
    hB, nwin, distinct = corrected_block_entropy(s.symbols, m, B)
    hB1 = corrected_block_entropy(s.symbols, m, B - 1)[0] if B > 1 else 0.0
    warning = None
    if distinct > nwin / 10:
        warning = f"undersampled: {distinct} distinct blocks of length {B} in {nwin} windows"
    return EntropyEstimate(hB - hB1, 0.0, f"block{B}", len(s), warning)


class Estimator:
    """Named estimator used by the finite-size protocol.

    ``windows`` is the number of independent windows one call consumes
    (cross parsing needs a database and a target).
    """

    def __init__(self, name: str, fn: Callable[..., EntropyEstimate], windows: int = 1):
        self.name, self.fn, self.windows = name, fn, windows

    def __call__(self, *seqs: SymbolSequence) -> EntropyEstimate:
        return self.fn(*seqs)

    def __repr__(self) -> str:
        return f"Estimator({self.name!r})"


def get_estimator(name: str, block_length: int = 8) -> Estimator:
    if isinstance(name, Estimator):
        return name
    if name == "ctw":
        return Estimator("ctw", ctw_entropy_rate)
    if name == "lz":
        return Estimator("lz", lz_cross_parse_rate, windows=2)
    if name == "block":
        return Estimator("block", lambda s: block_entropy_rate(s, block_length))
    raise ValueError(f"unknown estimator {name!r}; valid methods: {', '.join(ESTIMATORS)}")


ESTIMATORS = ("ctw", "lz", "block")
