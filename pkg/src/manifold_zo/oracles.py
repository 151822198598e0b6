"""Function-value oracles with reproducible noise and call accounting.

An oracle is the only thing a zeroth-order solver may query: it returns
F(x, xi) where the realization xi is addressed by an integer sample key.
The same key always yields the same realization, so a displaced evaluation
and its baseline can share one xi as the estimators require.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .rng import key_indices, key_normals

__all__ = ["ZeroOrderOracle"]

DETERMINISTIC = "deterministic"
ADDITIVE_NOISE = "additive-noise"
FINITE_SUM = "finite-sum"


class ZeroOrderOracle:
    """Sampled or deterministic function-value source F(x, xi).

    Parameters
    ----------
    value_batch
        Vectorized clean objective: maps a stack of points ``(B, *ambient)``
        to values ``(B,)``.
    mode
        ``"deterministic"``, ``"additive-noise"`` (value plus reproducible
        N(0, noise_sd^2) keyed by the sample key), or ``"finite-sum"`` (the
        key selects a summand index with E_xi F(x, xi) = f(x)).
    """

    def __init__(
        self,
        value_batch: Callable[[np.ndarray], np.ndarray],
        mode: str = DETERMINISTIC,
        seed: int = 0,
        noise_sd: float = 0.0,
        num_terms: int | None = None,
        term_batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    ):
        if mode not in (DETERMINISTIC, ADDITIVE_NOISE, FINITE_SUM):
            raise ValueError(f"unknown oracle mode {mode!r}")
        if mode == ADDITIVE_NOISE and noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if mode == FINITE_SUM:
            if num_terms is None or num_terms < 1 or term_batch is None:
                raise ValueError("finite-sum mode needs num_terms >= 1 and term_batch")
        self._value_batch = value_batch
        self._term_batch = term_batch
        self.mode = mode
        self.seed = int(seed)
        self.noise_sd = float(noise_sd)
        self.num_terms = num_terms
        self._calls = 0

    @property
    def calls(self) -> int:
        """Total number of function evaluations so far."""
        return self._calls

    @property
    def stochastic(self) -> bool:
        """Whether distinct sample keys can yield distinct values at one point.

        Degenerate configurations (zero noise, a single summand) count as
        deterministic so that baseline evaluations may be shared.
        """
        if self.mode == ADDITIVE_NOISE:
            return self.noise_sd > 0.0
        if self.mode == FINITE_SUM:
            return self.num_terms > 1
        return False

    def eval_batch(self, points: np.ndarray, keys: np.ndarray) -> np.ndarray:
        """Evaluate F at a stack of points, one sample key per point.

        ``points`` may also be a single point, broadcast against ``keys``.
        Each entry counts as one oracle call.
        """
        keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
        points = np.asarray(points)
        if points.ndim == 2:
            points = np.broadcast_to(points, keys.shape + points.shape)
        elif points.shape[0] != keys.shape[0]:
            raise ValueError("points and keys disagree on batch size")
        self._calls += keys.shape[0]
        if self.mode == FINITE_SUM and self.num_terms > 1:
            idx = key_indices(self.seed, keys, self.num_terms)
            return np.asarray(self._term_batch(points, idx), dtype=float)
        if self.mode == FINITE_SUM:
            idx = np.zeros(keys.shape, dtype=np.int64)
            return np.asarray(self._term_batch(points, idx), dtype=float)
        vals = np.asarray(self._value_batch(points), dtype=float)
        if self.mode == ADDITIVE_NOISE and self.noise_sd > 0.0:
            vals = vals + self.noise_sd * key_normals(self.seed, keys)
        return vals

    def eval(self, x: np.ndarray, key: int = 0) -> float:
        return float(self.eval_batch(x[None], np.asarray([key], dtype=np.uint64))[0])
