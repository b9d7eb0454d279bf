"""Evaluation metrics: word error rate and Spearman rank correlation."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from scipy import stats

__all__ = ["levenshtein", "wer", "spearman_rho"]


def _as_words(seq) -> list[str]:
    if isinstance(seq, str):
        return seq.split()
    return list(seq)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance (substitutions + insertions + deletions)."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def wer(hypothesis, reference) -> float:
    """Word error rate: edit distance over words / reference word count.

    Accepts strings (split on whitespace) or word sequences.
    """
    hyp, ref = _as_words(hypothesis), _as_words(reference)
    if not ref:
        raise ValueError("word error rate is undefined for an empty reference")
    return levenshtein(hyp, ref) / len(ref)


def _permutation_table(n: int) -> np.ndarray:
    """All permutations of range(n) as an (n!, n) int array, built by
    repeated insertion (no Python-level tuple materialization)."""
    table = np.zeros((1, 1), dtype=np.int8)
    for k in range(2, n + 1):
        m = table.shape[0]
        grown = np.empty((m * k, k), dtype=np.int8)
        for pos in range(k):
            block = grown[pos * m : (pos + 1) * m]
            block[:, :pos] = table[:, :pos]
            block[:, pos] = k - 1
            block[:, pos + 1 :] = table[:, pos:]
        table = grown
    return table


_EXACT_P_MAX_N = 10


def spearman_rho(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation with average ranks for ties.

    For n <= 10 the two-sided p-value is exact: the fraction of all n!
    pairings whose |rho| reaches the observed one. Larger n uses the
    usual t-distribution approximation.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D sequences")
    n = xs.size
    if n < 3:
        raise ValueError("need at least 3 observations")
    rx = stats.rankdata(xs)
    ry = stats.rankdata(ys)
    sx = rx - rx.mean()
    sy = ry - ry.mean()
    denom = math.sqrt(float((sx**2).sum() * (sy**2).sum()))
    if denom == 0.0:
        raise ValueError("rank correlation is undefined for constant input")
    rho = float(sx @ sy) / denom

    if n <= _EXACT_P_MAX_N:
        perms = _permutation_table(n)
        threshold = abs(rho) - 1e-12
        hits = 0
        chunk = 250_000
        for start in range(0, perms.shape[0], chunk):
            permuted = sy[perms[start : start + chunk].astype(np.int64)]
            rhos = permuted @ sx / denom
            hits += int(np.count_nonzero(np.abs(rhos) >= threshold))
        p = hits / perms.shape[0]
    else:
        t = rho * math.sqrt((n - 2) / max(1.0 - rho * rho, 1e-300))
        p = float(2.0 * stats.t.sf(abs(t), df=n - 2))
    return rho, p
