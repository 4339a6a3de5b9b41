"""Exact categorical distributions over a finite vocabulary."""

from __future__ import annotations

import numpy as np

# Floor used inside log() so that exact zeros in tabular rows stay finite.
# Softmax outputs are strictly positive and never touch it.
LOG_FLOOR = 1e-300

# Tolerance on the normalization invariant.
SUM_TOL = 1e-12


class ProbVector:
    """A categorical distribution stored as a dense float64 vector.

    Entries must be finite, non-negative, and sum to 1 within 1e-12. Exact
    zeros are allowed; ``log`` / ``logprob`` apply the zero floor so callers
    can work in log space without special-casing them.
    """

    __slots__ = ("p",)

    def __init__(self, p, validate: bool = True):
        self.p = np.asarray(p, dtype=np.float64)
        if validate:
            if self.p.ndim != 1 or self.p.size < 1:
                raise ValueError("probability vector must be 1-D and non-empty")
            if not np.all(np.isfinite(self.p)):
                raise ValueError("probability vector contains NaN or Inf")
            if np.any(self.p < 0.0):
                raise ValueError("probability vector has a negative entry")
            total = float(self.p.sum())
            if abs(total - 1.0) > SUM_TOL:
                raise ValueError(f"probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return self.p.size

    def log(self) -> np.ndarray:
        """Elementwise log with exact zeros floored to log(1e-300)."""
        return np.log(np.maximum(self.p, LOG_FLOOR))

    def logprob(self, token: int) -> float:
        return float(np.log(max(self.p[token], LOG_FLOOR)))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ProbVector({self.p!r})"


def one_hot(index: int, size: int) -> ProbVector:
    p = np.zeros(size)
    p[index] = 1.0
    return ProbVector(p)


def uniform(size: int) -> ProbVector:
    return ProbVector(np.full(size, 1.0 / size))


def sample_index(weights: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from a non-negative weight vector given a uniform variate.

    Weights need not be normalized. Deterministic in (weights, u); used
    everywhere a categorical draw is needed so that sampling never depends
    on generator call order.
    """
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, len(weights) - 1)


def random_simplex(gen: np.random.Generator, size: int, n: int | None = None) -> np.ndarray:
    """Draw points uniformly from the probability simplex (flat Dirichlet).

    Returns a (size,) vector, or an (n, size) matrix of independent rows
    when ``n`` is given.
    """
    rows = gen.standard_gamma(1.0, size=(n or 1, size))
    rows /= rows.sum(axis=1, keepdims=True)
    return rows if n is not None else rows[0]
