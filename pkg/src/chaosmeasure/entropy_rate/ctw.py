"""Infinite-depth context tree weighting.

The tree is grown lazily. A context seen exactly once is kept as a single
leaf that remembers where in the sequence it occurred; the chain of
single-visit nodes below it all carry the same one-symbol KT estimate, so
its weighted probability is exactly ``1/m`` and nothing deeper needs to
exist. When a second visit arrives the leaf is split, and both histories are
walked further back until they disagree.

Context symbols live in ``0..m-1``; index ``m`` marks "before the start of
the sequence" and turns every context into a unique one eventually, which
keeps the recursion finite.

All probabilities are stored as natural logs.
"""
from __future__ import annotations

import math

import numba
import numpy as np

LN2 = math.log(2.0)


# Node table columns; every node is one row of a float64 table so a visit
# touches a single cache line or two. Integer fields are exact below 2**53.
_LPE, _LPW, _LKIDS, _OCC, _TOT, _CNT = 0, 1, 2, 3, 4, 5


@numba.njit(cache=True)
def _grow(tab):
    t2 = np.empty((tab.shape[0] * 2, tab.shape[1]))
    t2[: tab.shape[0]] = tab
    return t2


@numba.njit(cache=True)
def _ctw_pass(x, m, max_depth, codelen, init_cap):
    """Sequentially code ``x``; writes -ln P(x_t | past) into ``codelen``.

    Returns (total code length in nats, number of nodes).
    ``max_depth < 0`` means unbounded.
    """
    n = x.shape[0]
    width = _CNT + 2 * m + 1
    kid0 = _CNT + m
    tab = np.empty((max(init_cap, 16), width))
    path = np.empty(64, dtype=np.int64)
    half_m = 0.5 * m
    log_inv_m = -math.log(m)
    ln2 = math.log(2.0)
    # log(k + 1/2) and log(k + m/2) for small k
    ntab = 4096
    lnum = np.empty(ntab)
    lden = np.empty(ntab)
    for k in range(ntab):
        lnum[k] = math.log(k + 0.5)
        lden[k] = math.log(k + half_m)

    nnodes = 1
    tab[0, :] = 0.0
    tab[0, kid0:] = -1.0
    tab[0, _OCC] = 0.0
    total = 0.0
    for t in range(n):
        s = x[t]
        plen = 0
        node = 0
        d = 0
        if t == 0:
            path[0] = 0
            plen = 1
        else:
            while True:
                if plen + 2 > path.shape[0]:
                    p2 = np.empty(path.shape[0] * 2, dtype=np.int64)
                    p2[:plen] = path[:plen]
                    path = p2
                path[plen] = node
                plen += 1
                if max_depth >= 0 and d >= max_depth:
                    tab[node, _OCC] = -1.0
                    break
                if nnodes + 2 > tab.shape[0]:
                    tab = _grow(tab)
                j = np.int64(tab[node, _OCC])
                if j >= 0:
                    # second visit: push the earlier occurrence one level down
                    cj = x[j - d - 1] if j - d - 1 >= 0 else m
                    c = nnodes
                    nnodes += 1
                    tab[c, :] = 0.0
                    tab[c, kid0:] = -1.0
                    tab[c, _CNT + x[j]] = 1.0
                    tab[c, _TOT] = 1.0
                    tab[c, _LPE] = log_inv_m
                    tab[c, _LPW] = log_inv_m
                    tab[c, _OCC] = j
                    tab[node, kid0 + cj] = c
                    tab[node, _OCC] = -1.0
                    tab[node, _LKIDS] = log_inv_m
                ct = x[t - d - 1] if t - d - 1 >= 0 else m
                c = np.int64(tab[node, kid0 + ct])
                if c < 0:
                    c = nnodes
                    nnodes += 1
                    tab[c, :] = 0.0
                    tab[c, kid0:] = -1.0
                    tab[c, _OCC] = t
                    tab[node, kid0 + ct] = c
                    path[plen] = c
                    plen += 1
                    break
                node = c
                d += 1

        old_root = tab[0, _LPW]
        delta = 0.0  # change of log Pw in the child just updated
        for k in range(plen - 1, -1, -1):
            nd = path[k]
            cs = np.int64(tab[nd, _CNT + s])
            tot = np.int64(tab[nd, _TOT])
            a = lnum[cs] if cs < ntab else math.log(cs + 0.5)
            b = lden[tot] if tot < ntab else math.log(tot + half_m)
            lpe = tab[nd, _LPE] + a - b
            tab[nd, _LPE] = lpe
            tab[nd, _CNT + s] = cs + 1
            tab[nd, _TOT] = tot + 1
            prev = tab[nd, _LPW]
            if k == plen - 1 or (max_depth >= 0 and k >= max_depth):
                # deepest node on the path has no children (fresh leaf or depth cap)
                lpw = lpe
            else:
                kids = tab[nd, _LKIDS] + delta
                tab[nd, _LKIDS] = kids
                diff = lpe - kids
                if diff >= 0.0:
                    lpw = lpe + (math.log1p(math.exp(-diff)) if diff < 745.0 else 0.0) - ln2
                else:
                    lpw = kids + (math.log1p(math.exp(diff)) if diff > -745.0 else 0.0) - ln2
            tab[nd, _LPW] = lpw
            delta = lpw - prev
        codelen[t] = old_root - tab[0, _LPW]
        total = -tab[0, _LPW]
    return total, nnodes


def ctw_codelengths(symbols, alphabet_size: int, max_depth: int | None = None) -> np.ndarray:
    """Per-symbol ideal code lengths in bits, ``-log2 P(x_t | x_0..x_{t-1})``."""
    x = np.ascontiguousarray(symbols, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= alphabet_size):
        raise ValueError(f"symbols outside alphabet of size {alphabet_size}")
    codelen = np.zeros(x.shape[0])
    if x.size == 0:
        return codelen
    _ctw_pass(x, int(alphabet_size), -1 if max_depth is None else int(max_depth), codelen, 3 * x.shape[0] + 16)
    return codelen / LN2


def ctw_log2_probability(symbols, alphabet_size: int, max_depth: int | None = None) -> float:
    """``log2 Pw`` of the whole sequence under the weighted context tree."""
    x = np.ascontiguousarray(symbols, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= alphabet_size):
        raise ValueError(f"symbols outside alphabet of size {alphabet_size}")
    if x.size == 0:
        return 0.0
    codelen = np.zeros(x.shape[0])
    total, _ = _ctw_pass(x, int(alphabet_size), -1 if max_depth is None else int(max_depth), codelen,
                         3 * x.shape[0] + 16)
    return -total / LN2
