"""Lempel-Ziv cross parsing against a fixed database sequence."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _suffix_automaton(db, m):
    n = db.shape[0]
    cap = 2 * n + 2
    nxt = np.full((cap, m), -1, dtype=np.int32)
    link = np.full(cap, -1, dtype=np.int32)
    length = np.zeros(cap, dtype=np.int32)
    size = 1
    last = 0
    for i in range(n):
        c = db[i]
        cur = size
        size += 1
        length[cur] = length[last] + 1
        p = last
        while p != -1 and nxt[p, c] == -1:
            nxt[p, c] = cur
            p = link[p]
        if p == -1:
            link[cur] = 0
        else:
            q = nxt[p, c]
            if length[p] + 1 == length[q]:
                link[cur] = q
            else:
                clone = size
                size += 1
                length[clone] = length[p] + 1
                for a in range(m):
                    nxt[clone, a] = nxt[q, a]
                link[clone] = link[q]
                while p != -1 and nxt[p, c] == q:
                    nxt[p, c] = clone
                    p = link[p]
                link[q] = clone
                link[cur] = clone
        last = cur
    return nxt


@numba.njit(cache=True)
def _cross_parse(nxt, target):
    """Greedy longest-match parse of ``target``; returns the number of phrases."""
    phrases = 0
    state = 0
    run = 0
    i = 0
    n = target.shape[0]
    while i < n:
        s = nxt[state, target[i]]
        if s >= 0:
            state = s
            run += 1
            i += 1
        else:
            phrases += 1
            if run == 0:
                # symbol never occurs in the database
                i += 1
            state = 0
            run = 0
    if run > 0:
        phrases += 1
    return phrases


def cross_parse_phrases(database, target, alphabet_size: int) -> int:
    """Number of phrases when ``target`` is parsed into longest substrings of ``database``."""
    db = np.ascontiguousarray(database, dtype=np.int64)
    tg = np.ascontiguousarray(target, dtype=np.int64)
    nxt = _suffix_automaton(db, int(alphabet_size))
    return int(_cross_parse(nxt, tg))
