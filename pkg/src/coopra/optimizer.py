"""Centralized benchmark: minimize the discounted total backlog over all partitions.

Partitions are coded as restricted-growth label strings: MTD 0 has label 0
and every later MTD reuses an earlier label or opens the next unused one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .channel import Topology, expected_ra_energy
from .model import SystemConfig
from .stochastics import build_kernel, exact_departure_prob, state_distributions
from .valuation import horizon as value_horizon

EXHAUSTIVE_CAP = 10


class NoFeasibleSolution(RuntimeError):
    def __init__(self, message: str, best_infeasible: "Assignment | None" = None, violations=()):
        super().__init__(message)
        self.best_infeasible = best_infeasible
        self.violations = list(violations)


def normalize_labels(labels: Sequence[int]) -> tuple[int, ...]:
    """Relabel so that labels appear in first-use order 0, 1, 2, ..."""
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(int(x), len(seen)) for x in labels)


def restricted_growth_strings(M: int) -> Iterator[tuple[int, ...]]:
    """All set partitions of range(M), one label string each (Bell(M) in total)."""
    if M < 1:
        return
    labels = [0] * M

    def rec(i: int, top: int):
        if i == M:
            yield tuple(labels)
            return
        for c in range(top + 2):
            labels[i] = c
            yield from rec(i + 1, max(top, c))

    yield from rec(1, 0)


@dataclass(frozen=True)
class Assignment:
    """Binary MTD-to-coalition assignment, stored as normalized labels."""

    labels: tuple[int, ...]

    def __post_init__(self):
        if normalize_labels(self.labels) != tuple(self.labels):
            raise ValueError("labels must be in restricted-growth form")

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Assignment":
        return cls(normalize_labels(labels))

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]]) -> "Assignment":
        M = sum(len(g) for g in groups)
        labels = [-1] * M
        for n, g in enumerate(groups):
            for m in g:
                if labels[m] != -1:
                    raise ValueError(f"MTD {m} assigned twice")
                labels[m] = n
        if -1 in labels:
            raise ValueError("every MTD needs exactly one coalition")
        return cls.from_labels(labels)

    @classmethod
    def from_matrix(cls, k) -> "Assignment":
        k = np.asarray(k)
        if not np.isin(k, (0, 1)).all():
            raise ValueError("assignment entries must be binary")
        if not (k.sum(axis=1) == 1).all():
            raise ValueError("each MTD must belong to exactly one coalition")
        return cls.from_labels(k.argmax(axis=1))

    @property
    def M(self) -> int:
        return len(self.labels)

    @property
    def N(self) -> int:
        return max(self.labels) + 1

    @property
    def matrix(self) -> np.ndarray:
        k = np.zeros((self.M, self.N), dtype=np.int8)
        k[np.arange(self.M), self.labels] = 1
        return k

    def groups(self) -> list[tuple[int, ...]]:
        out: list[list[int]] = [[] for _ in range(self.N)]
        for m, n in enumerate(self.labels):
            out[n].append(m)
        return [tuple(g) for g in out]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mtd", "coalition"])
            w.writerows(enumerate(self.labels))


@lru_cache(maxsize=65536)
def _coalition_mean_queue(size: int, q0: int, pd: float, p: float, K: int, hops: int) -> np.ndarray:
    kernel = build_kernel(size, p, pd, K)
    out = state_distributions(kernel, q0, hops) @ np.arange(K + 1)
    out.setflags(write=False)
    return out


def _horizon(cfg: SystemConfig, hops: int | None) -> int:
    return value_horizon(cfg.delta, cfg.horizon_eps) if hops is None else int(hops)


def _queues(M: int, member_queues) -> np.ndarray:
    return np.zeros(M) if member_queues is None else np.asarray(member_queues, dtype=float)


def member_trajectories(assignment: Assignment, cfg: SystemConfig, member_queues=None,
                        hops: int | None = None) -> np.ndarray:
    """Expected backlog of every MTD for slots 0..hops, shape (hops + 1, M).

    Coalition queues evolve under the exact departure probability for the
    assignment's number of heads; members split the expected change evenly.
    """
    hops = _horizon(cfg, hops)
    q = _queues(assignment.M, member_queues)
    pd = exact_departure_prob(assignment.N, cfg.mu)
    out = np.empty((hops + 1, assignment.M))
    for g in assignment.groups():
        idx = list(g)
        s = len(g)
        q0 = int(round(min(q[idx].sum(), cfg.K)))
        mean = _coalition_mean_queue(s, q0, pd, cfg.p, cfg.K, hops)
        out[:, idx] = np.clip(q[idx][None, :] + (mean - mean[0])[:, None] / s, 0.0, cfg.K)
    return out


def discount_weights(delta: float, hops: int) -> np.ndarray:
    return np.power(delta, np.arange(hops + 1, dtype=float))


def objective(assignment: Assignment, cfg: SystemConfig, member_queues=None, hops: int | None = None) -> float:
    """Discounted sum over MTDs and slots 0..hops of the expected backlog."""
    hops = _horizon(cfg, hops)
    traj = member_trajectories(assignment, cfg, member_queues, hops)
    return float(discount_weights(cfg.delta, hops) @ traj.sum(axis=1))


def per_slot_energy(assignment: Assignment, cfg: SystemConfig, topology: Topology) -> np.ndarray:
    """Expected energy per request charged to each MTD, joules.

    Each member carries an equal share of the head's expected cellular
    energy plus its own short-range hop to the head.
    """
    pd = exact_departure_prob(assignment.N, cfg.mu)
    out = np.empty(assignment.M)
    for g in assignment.groups():
        head = g[0]
        e_lr = expected_ra_energy(float(topology.e_lr[head]), pd)
        out[list(g)] = e_lr / len(g) + topology.e_sr[list(g), head]
    return out


def discounted_energy(assignment: Assignment, cfg: SystemConfig, topology: Topology,
                      hops: int | None = None) -> np.ndarray:
    hops = _horizon(cfg, hops)
    return per_slot_energy(assignment, cfg, topology) * discount_weights(cfg.delta, hops).sum()


def energy_budget(cfg: SystemConfig, topology: Topology, hops: int | None = None) -> np.ndarray:
    """Per-MTD energy cap: the configured value or twice the all-singleton discounted energy."""
    M = topology.M
    if cfg.E_max is not None:
        return np.full(M, float(cfg.E_max))
    alone = Assignment(tuple(range(M)))
    return 2.0 * discounted_energy(alone, cfg, topology, hops)


@dataclass
class Feasibility:
    ok: bool
    violations: list[str] = field(default_factory=list)
    # total normalized excess, used to rank infeasible candidates
    excess: float = 0.0


def feasible(assignment: Assignment, cfg: SystemConfig, topology: Topology, hops: int | None = None,
             budget: np.ndarray | None = None) -> Feasibility:
    if assignment.M != topology.M:
        return Feasibility(False, [f"assignment covers {assignment.M} MTDs, topology has {topology.M}"], np.inf)
    violations = []
    excess = 0.0
    for g in assignment.groups():
        if len(g) > 1:
            sub = topology.sr_feasible[np.ix_(g, g)]
            bad = np.argwhere(~sub)
            for i, j in bad:
                if i < j:
                    violations.append(f"sr link infeasible: {g[i]}-{g[j]}")
                    excess += 1.0
    if budget is None:
        budget = energy_budget(cfg, topology, hops)
    energy = discounted_energy(assignment, cfg, topology, hops)
    over = energy > budget * (1.0 + 1e-12)
    for m in np.flatnonzero(over):
        violations.append(f"energy over budget: mtd {m} uses {energy[m]:.6e} J > {budget[m]:.6e} J")
        if np.isfinite(energy[m]):
            excess += float(energy[m] / budget[m] - 1.0)
        else:
            excess += 1.0
    return Feasibility(not violations, violations, excess)


@dataclass
class SearchResult:
    assignment: Assignment
    objective: float
    evaluations: int = 0
    history: list[float] = field(default_factory=list)


class _Evaluator:
    def __init__(self, cfg, topology, member_queues, hops):
        self.cfg = cfg
        self.topology = topology
        self.queues = _queues(topology.M, member_queues)
        self.hops = _horizon(cfg, hops)
        self.budget = energy_budget(cfg, topology, self.hops)
        self._cache: dict[tuple[int, ...], tuple] = {}

    def key(self, labels: tuple[int, ...]) -> tuple:
        hit = self._cache.get(labels)
        if hit is None:
            a = Assignment(labels)
            f = feasible(a, self.cfg, self.topology, self.hops, self.budget)
            if f.ok:
                hit = (0, objective(a, self.cfg, self.queues, self.hops))
            else:
                hit = (1, f.excess)
            self._cache[labels] = hit
        return hit

    @property
    def evaluations(self) -> int:
        return len(self._cache)


def exhaustive_search(cfg: SystemConfig, topology: Topology, member_queues=None,
                      hops: int | None = None) -> SearchResult:
    M = topology.M
    if M > EXHAUSTIVE_CAP:
        raise ValueError(f"instance too large: M={M} > {EXHAUSTIVE_CAP}")
    ev = _Evaluator(cfg, topology, member_queues, hops)
    best, best_key = None, None
    for labels in restricted_growth_strings(M):
        k = ev.key(labels)
        if best_key is None or k < best_key:
            best, best_key = labels, k
    if best_key[0] != 0:
        raise NoFeasibleSolution("no feasible partition", Assignment(best))
    return SearchResult(Assignment(best), best_key[1], ev.evaluations)


def ga_search(cfg: SystemConfig, topology: Topology, seed: int | None = None, member_queues=None,
              hops: int | None = None, initial: Sequence[Assignment] = ()) -> SearchResult:
    """Elitist genetic search over restricted-growth label strings.

    Feasible individuals always rank ahead of infeasible ones; among
    infeasible ones a smaller constraint excess wins.  The all-singleton
    partition and any ``initial`` assignments are injected into the first
    population.
    """
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    M = topology.M
    ev = _Evaluator(cfg, topology, member_queues, hops)
    pop_size = cfg.ga_population
    seeds = [tuple(range(M))] + [a.labels for a in initial]
    pop = [normalize_labels(x) for x in seeds[:pop_size]]
    while len(pop) < pop_size:
        pop.append(normalize_labels(rng.integers(0, M, size=M)))
    keys = [ev.key(x) for x in pop]
    elite = min(2, pop_size)
    history = []

    def tournament() -> tuple[int, ...]:
        idx = rng.integers(0, pop_size, size=cfg.ga_tournament)
        return pop[min(idx, key=lambda i: keys[i])]

    for _ in range(cfg.ga_generations):
        order = sorted(range(pop_size), key=lambda i: keys[i])
        history.append(keys[order[0]][1] if keys[order[0]][0] == 0 else np.inf)
        nxt = [pop[i] for i in order[:elite]]
        while len(nxt) < pop_size:
            a, b = np.array(tournament()), np.array(tournament())
            if rng.random() < cfg.ga_crossover:
                mask = rng.random(M) < 0.5
                child = np.where(mask, a, b)
            else:
                child = a.copy()
            flip = rng.random(M) < cfg.ga_mutation
            if flip.any():
                top = int(child.max()) + 2
                child[flip] = rng.integers(0, top, size=int(flip.sum()))
            nxt.append(normalize_labels(child))
        pop = nxt
        keys = [ev.key(x) for x in pop]

    best = min(range(pop_size), key=lambda i: keys[i])
    history.append(keys[best][1] if keys[best][0] == 0 else np.inf)
    if keys[best][0] != 0:
        a = Assignment(pop[best])
        f = feasible(a, cfg, topology, ev.hops, ev.budget)
        raise NoFeasibleSolution("no feasible individual found", a, f.violations)
    return SearchResult(Assignment(pop[best]), keys[best][1], ev.evaluations, history)
