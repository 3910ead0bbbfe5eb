"""Closed-form contention probabilities and the coalition queue kernel."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np


def binomial_pmf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1)
    coeffs = np.array([comb(n, int(i)) for i in k], dtype=float)
    return coeffs * np.power(p, k) * np.power(1.0 - p, n - k)


def noncoop_success_prob(M: int, p: float, mu: int) -> float:
    """Per-slot success probability of one MTD without cooperation.

    Evaluated exactly as the closed form is written: the lone-transmitter
    term plus the binomially weighted distinct-preamble terms for j >= 2.
    This is an approximation of the protocol, see ``mc_success_prob``.
    """
    if M < 1 or mu < 1:
        raise ValueError("M and mu must be >= 1")
    lone = p * (1.0 - p) ** (M - 1)
    if M == 1:
        return lone
    pmf = binomial_pmf(M, p)
    j = np.arange(2, M + 1)
    distinct = (1.0 / mu) * (1.0 - 1.0 / mu) ** (j - 1)
    return float(lone + np.sum(distinct * pmf[2:]))


def mc_success_prob(M: int, p: float, mu: int, slots: int, rng: np.random.Generator,
                    batch: int = 100_000) -> float:
    """Monte-Carlo frequency with which MTD 0 transmits alone on its preamble."""
    wins = 0
    done = 0
    while done < slots:
        n = min(batch, slots - done)
        tx = rng.random((n, M)) < p
        pre = rng.integers(0, mu, size=(n, M))
        clash = np.any(tx[:, 1:] & (pre[:, 1:] == pre[:, :1]), axis=1)
        wins += int(np.count_nonzero(tx[:, 0] & ~clash))
        done += n
    return wins / slots


def coalition_arrival_pmf(size: int, p: float) -> np.ndarray:
    """Pr(a = n), n = 0..size, for ``size`` members each arriving w.p. p."""
    if size < 1:
        raise ValueError("size must be >= 1")
    return binomial_pmf(size, p)


def exact_departure_prob(num_heads: int, mu: int) -> float:
    if num_heads < 1:
        raise ValueError("num_heads must be >= 1")
    return (1.0 / mu) * (1.0 - 1.0 / mu) ** (num_heads - 1)


def worstcase_departure_prob(M: int, size: int, mu: int) -> float:
    """Departure probability assuming every MTD outside the coalition contends."""
    if not 1 <= size <= M:
        raise ValueError("need 1 <= size <= M")
    return (1.0 / mu) * (1.0 - 1.0 / mu) ** (M - size)


@dataclass(frozen=True)
class TransitionKernel:
    """One-slot queue transition model of a coalition.

    ``matrix[q, q']`` is the probability of moving from q to q'.  Departures
    are impossible from an empty queue and arrivals beyond K are folded into
    state K.
    """

    coalition_size: int
    p: float
    depart_prob: float
    capacity: int
    matrix: np.ndarray = field(repr=False, compare=False)

    def one_hop(self, q: int, j: int) -> float:
        target = q + j
        if j < -1 or j > self.coalition_size or not 0 <= target <= self.capacity:
            return 0.0
        # boundary mass sits on the clamped state
        return float(self._jump_table()[q].get(j, 0.0))

    def jump_pmf(self, q: int) -> dict[int, float]:
        return dict(self._jump_table()[q])

    def _jump_table(self):
        return _jump_tables(self.coalition_size, self.p, self.depart_prob, self.capacity)


@lru_cache(maxsize=4096)
def _jump_tables(size: int, p: float, pd: float, K: int) -> tuple[dict[int, float], ...]:
    arrivals = coalition_arrival_pmf(size, p)
    tables = []
    for q in range(K + 1):
        jumps: dict[int, float] = {}
        dep = ((0, 1.0),) if q == 0 else ((0, 1.0 - pd), (1, pd))
        for d, pr_d in dep:
            for a, pr_a in enumerate(arrivals):
                nxt = min(q - d + a, K)
                j = nxt - q
                jumps[j] = jumps.get(j, 0.0) + pr_d * float(pr_a)
        tables.append(jumps)
    return tuple(tables)


@lru_cache(maxsize=4096)
def _kernel_matrix(size: int, p: float, pd: float, K: int) -> np.ndarray:
    mat = np.zeros((K + 1, K + 1))
    for q, jumps in enumerate(_jump_tables(size, p, pd, K)):
        for j, pr in jumps.items():
            mat[q, q + j] += pr
    mat.setflags(write=False)
    return mat


def build_kernel(size: int, p: float, Pd: float, K: int) -> TransitionKernel:
    if size < 1 or K < 1:
        raise ValueError("size and K must be >= 1")
    if not 0.0 <= p <= 1.0 or not 0.0 <= Pd <= 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return TransitionKernel(size, float(p), float(Pd), K, _kernel_matrix(size, float(p), float(Pd), K))


def state_distributions(kernel: TransitionKernel, q_start: int, hops: int) -> np.ndarray:
    """Row n is the queue distribution after n hops from ``q_start`` (row 0 is a point mass)."""
    K = kernel.capacity
    out = np.zeros((hops + 1, K + 1))
    out[0, q_start] = 1.0
    for n in range(1, hops + 1):
        out[n] = out[n - 1] @ kernel.matrix
    return out


def multi_hop_prob(kernel: TransitionKernel, q_start: int, q_end: int, hops: int) -> float:
    """Sum over all ``hops``-step queue paths from q_start to q_end of the path products."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    K = kernel.capacity
    if not (0 <= q_start <= K and 0 <= q_end <= K):
        raise ValueError("queue lengths must lie in [0, K]")
    return float(state_distributions(kernel, q_start, hops)[hops, q_end])
