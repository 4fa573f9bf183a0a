"""Expected value of the lifted set function under independent inclusion.

For an ``I x S`` matrix ``x`` of inclusion probabilities, ``H(x)`` is the
expectation of the lifted set function over the random pair set that
contains each ``(i, s)`` independently with probability ``x[i, s-1]``.

Two exact evaluators are provided and cross-validate each other:

* :func:`exact_H_bruteforce` enumerates all ``2^(I*S)`` pair subsets;
* :func:`exact_H_factored` exploits that the value depends only on each
  item's maximum included state, whose law factorizes across items:

      q_i(s) = x_is * prod_{s' > s} (1 - x_is'),   q_i(0) = prod_s (1 - x_is)

  so ``H(x) = sum_u f(u) * prod_i q_i(u_i)`` over ``u in {0..S}^I``.

The factored form is the production path; the brute force is its oracle.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import CapacityError, ValidationError
from .model import LatticeObjective, enumerate_state_vectors
from .rng import substream

BRUTEFORCE_GUARD = 20  # max I*S for subset enumeration
_CHUNK = 1 << 14


def check_fractional(x: np.ndarray, objective: LatticeObjective) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (objective.item_count, objective.state_count):
        raise ValidationError(
            "x", f"expected shape {(objective.item_count, objective.state_count)}, got {x.shape}"
        )
    if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
        raise ValidationError("x", "entries must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def exact_H_bruteforce(x: np.ndarray, objective: LatticeObjective) -> float:
    """Exact H by enumerating every subset of item-state pairs."""
    x = check_fractional(x, objective)
    I, S = x.shape
    E = I * S
    if E > BRUTEFORCE_GUARD:
        raise CapacityError(
            f"I*S = {E} exceeds the 2^{BRUTEFORCE_GUARD} subset guard; "
            "use exact_H_factored or estimate_H"
        )
    flat = x.reshape(-1)
    total = 0.0
    n = 1 << E
    bit_cols = np.arange(E)
    state_vals = np.arange(1, S + 1)
    for start in range(0, n, _CHUNK):
        masks = np.arange(start, min(start + _CHUNK, n), dtype=np.int64)
        bits = (masks[:, None] >> bit_cols) & 1  # (chunk, E)
        probs = np.prod(np.where(bits == 1, flat, 1.0 - flat), axis=1)
        incl = bits.reshape(-1, I, S).astype(bool)
        u = np.max(np.where(incl, state_vals[None, None, :], 0), axis=2)
        total += float(np.dot(objective.value_many(u), probs))
    return total


def _suffix_products(x: np.ndarray) -> np.ndarray:
    """suffix[i, s] = prod over states s' > s of (1 - x_is')."""
    I, S = x.shape
    suffix = np.ones((I, S + 1))
    for s in range(S - 1, -1, -1):
        suffix[:, s] = suffix[:, s + 1] * (1.0 - x[:, s])
    return suffix


def max_state_distribution(x: np.ndarray) -> np.ndarray:
    """Per-item law of the maximum included state, shape ``(I, S+1)``.

    Column ``s`` is the probability that the highest included state of
    the item equals ``s`` (0 meaning no state included).
    """
    x = np.asarray(x, dtype=float)
    suffix = _suffix_products(x)
    q = np.empty_like(suffix)
    q[:, 0] = suffix[:, 0]
    q[:, 1:] = x * suffix[:, 1:]
    return q


class FactoredExtension:
    """Cached exact evaluator for one objective.

    Precomputes the objective on the full state-vector grid once; every
    subsequent ``H`` evaluation is a weighted sum over the grid, and
    marginal weights reuse per-item partial products.
    """

    def __init__(self, objective: LatticeObjective):
        self.objective = objective
        I, S = objective.item_count, objective.state_count
        self.grid = enumerate_state_vectors(I, S)  # raises CapacityError when too big
        self.values = np.asarray(objective.value_many(self.grid), dtype=float)
        self.I, self.S = I, S

    def H(self, x: np.ndarray) -> float:
        q = max_state_distribution(check_fractional(x, self.objective))
        gathered = q[np.arange(self.I)[None, :], self.grid]  # (N, I)
        return float(np.dot(self.values, gathered.prod(axis=1)))

    def marginals(self, x: np.ndarray) -> np.ndarray:
        """omega[i, s-1] = H(x with pair (i,s) forced in) - H(x)."""
        x = check_fractional(x, self.objective)
        suffix = _suffix_products(x)
        q = np.empty_like(suffix)
        q[:, 0] = suffix[:, 0]
        q[:, 1:] = x * suffix[:, 1:]
        gathered = q[np.arange(self.I)[None, :], self.grid]
        base = float(np.dot(self.values, gathered.prod(axis=1)))
        omega = np.empty((self.I, self.S))
        for i in range(self.I):
            partial = gathered.copy()
            partial[:, i] = 1.0
            without_i = self.values * partial.prod(axis=1)
            for s in range(1, self.S + 1):
                # forcing x_is = 1 zeroes the item's law below s and lifts level s
                q_forced = np.zeros(self.S + 1)
                q_forced[s] = suffix[i, s]
                q_forced[s + 1:] = q[i, s + 1:]
                omega[i, s - 1] = float(np.dot(without_i, q_forced[self.grid[:, i]])) - base
        return omega


def exact_H_factored(x: np.ndarray, objective: LatticeObjective) -> float:
    """Exact H via the per-item maximum-state factorization."""
    return FactoredExtension(objective).H(x)


def _draw_max_states(x: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    """Sample per-item maximum included states for n independent pair sets."""
    I, S = x.shape
    incl = rng.random((n, I, S)) < x[None, :, :]
    return np.max(np.where(incl, np.arange(1, S + 1)[None, None, :], 0), axis=2)


def estimate_H(x: np.ndarray, objective: LatticeObjective, samples: int,
               seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of H with its standard error.

    Deterministic in ``seed``. With a 0/1 matrix the draw is constant,
    so the standard error is exactly zero.
    """
    if samples < 1:
        raise ValidationError("samples", "must be at least 1")
    x = check_fractional(x, objective)
    rng = substream(seed, 0)
    vals = np.empty(samples)
    done = 0
    while done < samples:
        n = min(_CHUNK, samples - done)
        u = _draw_max_states(x, rng, n)
        vals[done:done + n] = objective.value_many(u)
        done += n
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else math.nan
    return mean, stderr


def sampled_marginals(x: np.ndarray, objective: LatticeObjective, samples: int,
                      seed: int = 0, *, rng: np.random.Generator | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo marginal weights using common random pair sets.

    The with-pair and without-pair expectations share every draw (the
    pair is simply toggled in), so the difference estimator avoids the
    variance of two independent estimates. Returns (omega, stderr),
    both ``I x S``.
    """
    if samples < 1:
        raise ValidationError("samples", "must be at least 1")
    x = check_fractional(x, objective)
    I, S = x.shape
    if rng is None:
        rng = substream(seed, 1)
    sums = np.zeros((I, S))
    sqsums = np.zeros((I, S))
    done = 0
    while done < samples:
        n = min(_CHUNK, samples - done)
        base = _draw_max_states(x, rng, n)
        base_vals = objective.value_many(base)
        for i in range(I):
            saved = base[:, i].copy()
            for s in range(1, S + 1):
                base[:, i] = np.maximum(saved, s)
                diff = objective.value_many(base) - base_vals
                sums[i, s - 1] += diff.sum()
                sqsums[i, s - 1] += np.dot(diff, diff)
            base[:, i] = saved
        done += n
    omega = sums / samples
    if samples > 1:
        var = np.maximum(sqsums - samples * omega**2, 0.0) / (samples - 1)
        stderr = np.sqrt(var / samples)
    else:
        stderr = np.full((I, S), math.nan)
    return omega, stderr


def marginal_weights(x: np.ndarray, objective: LatticeObjective, *, mode: str = "exact",
                     samples: int = 10_000, seed: int = 0) -> tuple[np.ndarray, np.ndarray | None]:
    """Marginal weight of forcing each pair in, exactly or sampled.

    Returns ``(omega, stderr)``; ``stderr`` is None in exact mode.
    """
    if mode == "exact":
        return FactoredExtension(objective).marginals(x), None
    if mode == "sampled":
        return sampled_marginals(x, objective, samples, seed)
    raise ValidationError("mode", f"unknown marginal mode {mode!r}")
