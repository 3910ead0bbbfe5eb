"""Slot-level simulation of random access under a coalition partition.

Per slot: every head whose coalition queue is nonempty picks a preamble
uniformly from ``mu``; a head succeeds iff nobody else picked the same one;
then new requests arrive (each MTD w.p. p) and queues update, with
overflow beyond K dropped.  The transmit decision uses the queue at the
start of the slot, matching the kernel in :mod:`coopra.stochastics`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .channel import Topology
from .formation import FormationTrace, run_formation
from .model import POLICIES, SystemConfig, assert_partition, canonical_groups, grand_coalition, singletons
from .optimizer import EXHAUSTIVE_CAP, Assignment, exhaustive_search, ga_search

_ALIASES = {"coalition_table1": "coalition", "noncoop": "noncooperative", "ga": "optimal"}

EVENT_FIELDS = ["slot", "arrivals", "transmitting_heads", "successes", "collisions", "drops", "energy_J"]


@dataclass
class SlotEvents:
    arrivals: np.ndarray
    transmitting: np.ndarray
    preambles: np.ndarray
    successes: np.ndarray
    collisions: np.ndarray
    drops: int
    energy: float = 0.0


@dataclass
class NetworkState:
    """Mutable run state: partition arrays plus queues."""

    groups: list[tuple[int, ...]]
    coal_of: np.ndarray
    heads: np.ndarray
    sizes: np.ndarray
    queue: np.ndarray
    member_queues: np.ndarray
    slot: int = 0

    @classmethod
    def from_groups(cls, groups, K: int, member_queues=None, slot: int = 0) -> "NetworkState":
        groups = [tuple(g) for g in canonical_groups(groups)]
        M = sum(len(g) for g in groups)
        assert_partition(groups, M)
        coal_of = np.empty(M, dtype=np.int64)
        for n, g in enumerate(groups):
            coal_of[list(g)] = n
        heads = np.array([g[0] for g in groups], dtype=np.int64)
        sizes = np.array([len(g) for g in groups], dtype=np.int64)
        mq = np.zeros(M) if member_queues is None else np.asarray(member_queues, dtype=float).copy()
        queue = np.minimum(np.rint(np.bincount(coal_of, weights=mq, minlength=len(groups))), K).astype(np.int64)
        return cls(groups, coal_of, heads, sizes, queue, mq, slot)

    @property
    def M(self) -> int:
        return len(self.coal_of)

    @property
    def N(self) -> int:
        return len(self.groups)

    def copy(self) -> "NetworkState":
        return NetworkState(list(self.groups), self.coal_of.copy(), self.heads.copy(), self.sizes.copy(),
                            self.queue.copy(), self.member_queues.copy(), self.slot)


def _sr_to_head(state: NetworkState, topology: Topology | None) -> np.ndarray:
    if topology is None:
        return np.zeros(state.M)
    return topology.e_sr[np.arange(state.M), state.heads[state.coal_of]]


def _advance(state: NetworkState, arrivals: np.ndarray, preambles: np.ndarray, cfg: SystemConfig,
             e_lr: np.ndarray | None, e_sr_head: np.ndarray):
    """Apply one slot in place; returns (tx mask, success mask over heads, drops, energy)."""
    tx = state.queue > 0
    pre = preambles[tx]
    counts = np.bincount(pre, minlength=cfg.mu)
    won = counts[pre] == 1
    dep = np.zeros(state.N, dtype=np.int64)
    dep[np.flatnonzero(tx)[won]] = 1
    arr_c = np.bincount(state.coal_of, weights=arrivals, minlength=state.N).astype(np.int64)
    q = state.queue - dep + arr_c
    over = np.maximum(q - cfg.K, 0)
    drops = int(over.sum())
    np.minimum(q, cfg.K, out=q)
    state.queue = q
    kept = arrivals
    if drops:
        # dropped requests are taken evenly from this slot's arrivals
        kept = arrivals * (1.0 - (over / np.maximum(arr_c, 1))[state.coal_of])
    mq = state.member_queues - (dep / state.sizes)[state.coal_of] + kept
    np.clip(mq, 0.0, cfg.K, out=mq)
    state.member_queues = mq
    state.slot += 1
    energy = 0.0
    if e_lr is not None:
        energy = float(e_lr[state.heads[tx]].sum() + e_sr_head @ arrivals)
    return tx, dep.astype(bool), drops, energy


@njit(cache=True)
def _run_chunk(queue, mq, coal_of, heads, sizes, arrivals, preambles, K, mu, e_lr, e_sr_head,
               n_tx, n_won, n_drop, energy, backlog):
    """Compiled slot loop with the same per-slot rules as ``_advance``; updates queues in place."""
    n_slots, M = arrivals.shape
    N = queue.shape[0]
    counts = np.zeros(mu, dtype=np.int64)
    dep = np.zeros(N, dtype=np.int64)
    arr_c = np.zeros(N, dtype=np.int64)
    over = np.zeros(N, dtype=np.int64)
    for t in range(n_slots):
        pre = preambles[t]
        e = 0.0
        for n in range(N):
            if queue[n] > 0:
                counts[pre[n]] += 1
        tx = 0
        won = 0
        for n in range(N):
            dep[n] = 0
            if queue[n] > 0:
                tx += 1
                e += e_lr[heads[n]]
                if counts[pre[n]] == 1:
                    dep[n] = 1
                    won += 1
        for n in range(N):
            if queue[n] > 0:
                counts[pre[n]] = 0
            arr_c[n] = 0
        for m in range(M):
            if arrivals[t, m]:
                arr_c[coal_of[m]] += 1
                e += e_sr_head[m]
        drops = 0
        total = 0
        for n in range(N):
            q = queue[n] - dep[n] + arr_c[n]
            over[n] = q - K if q > K else 0
            drops += over[n]
            queue[n] = q if q < K else K
            total += queue[n]
        for m in range(M):
            c = coal_of[m]
            a = 1.0 if arrivals[t, m] else 0.0
            if over[c] > 0:
                a = a * (1.0 - over[c] / max(arr_c[c], 1))
            x = mq[m] - dep[c] / sizes[c] + a
            mq[m] = min(max(x, 0.0), K)
        n_tx[t] = tx
        n_won[t] = won
        n_drop[t] = drops
        energy[t] = e
        backlog[t] = total


def step(state: NetworkState, cfg: SystemConfig, rng: np.random.Generator,
         topology: Topology | None = None) -> tuple[NetworkState, SlotEvents]:
    new = state.copy()
    arrivals = (rng.random(state.M) < cfg.p).astype(np.float64)
    preambles = rng.integers(0, cfg.mu, size=state.N)
    e_lr = None if topology is None else topology.e_lr
    tx, won, drops, energy = _advance(new, arrivals, preambles, cfg, e_lr, _sr_to_head(state, topology))
    tx_heads = state.heads[tx]
    events = SlotEvents(
        arrivals=arrivals.astype(np.int8),
        transmitting=tx_heads,
        preambles=preambles[tx],
        successes=state.heads[won],
        collisions=state.heads[tx & ~won],
        drops=drops,
        energy=energy,
    )
    return new, events


@dataclass
class RunMetrics:
    """Run summary; energies in joules, queues in requests."""

    fail_ratio: float
    energy_per_mtd: float
    mean_queue: float
    utility: float
    iterations: int
    moves_per_coalition: float
    drops: int
    price_of_anarchy: float | None = None
    transmissions: int = 0
    collisions: int = 0
    successes: int = 0
    arrivals: int = 0
    slots: int = 0
    M: int = 0
    num_coalitions: float = 0.0
    mean_coalition_size: float = 0.0
    formation_passes: int = 0

    @property
    def success_per_mtd_slot(self) -> float:
        return self.successes / (self.M * self.slots) if self.slots and self.M else 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ScenarioRun:
    metrics: RunMetrics
    groups: list[tuple[int, ...]]
    topology: Topology
    traces: list[FormationTrace] = field(default_factory=list)


def realized_utility(cfg: SystemConfig, mean_queue: float, energy: float, delivered: int,
                     mean_coalition_size: float) -> float:
    """Realized per-MTD cost: weighted backlog, energy per delivered request and coalition size."""
    per_request = 0.0 if energy == 0.0 else (energy / delivered if delivered else np.inf)
    return cfg.alpha * mean_queue + cfg.beta * cfg.energy_scale * per_request + cfg.gamma * mean_coalition_size


def price_of_anarchy(coalition_utility: float, optimal_utility: float) -> float:
    """Efficiency of the distributed outcome: optimal cost over coalition cost."""
    if coalition_utility <= 0.0:
        return 1.0 if optimal_utility <= 0.0 else np.inf
    return optimal_utility / coalition_utility


def normalize_policy(policy: str) -> str:
    policy = _ALIASES.get(policy, policy)
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    return policy


def streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent topology and traffic generators derived from one seed."""
    topo, traffic = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(topo), np.random.default_rng(traffic)


def optimal_groups(cfg: SystemConfig, topology: Topology, initial: Sequence[Sequence[int]] = ()) -> list[tuple[int, ...]]:
    """Exhaustive optimum when small enough, otherwise the genetic search result."""
    if topology.M <= EXHAUSTIVE_CAP:
        return exhaustive_search(cfg, topology).assignment.groups()
    seeds = [Assignment.from_groups(initial)] if initial else []
    return ga_search(cfg, topology, seed=cfg.rng_seed, initial=seeds).assignment.groups()


CHUNK = 2048


def simulate(cfg: SystemConfig, policy: str, slots: int, topology: Topology | None = None,
             assignment: Sequence[Sequence[int]] | None = None, seed: int | None = None,
             event_log: str | Path | None = None) -> ScenarioRun:
    if slots < 1:
        raise ValueError("slots must be >= 1")
    policy = normalize_policy(policy)
    seed = cfg.rng_seed if seed is None else seed
    topo_rng, rng = streams(seed)
    if topology is None:
        topology = Topology.build(cfg, topo_rng)
    M = topology.M

    traces: list[FormationTrace] = []

    def form(groups, queues) -> list[tuple[int, ...]]:
        part, trace = run_formation(groups, cfg, topology, member_queues=queues)
        traces.append(trace)
        return part.groups()

    if policy == "noncooperative":
        groups = singletons(M)
    elif policy == "fixed":
        if assignment is None:
            raise ValueError("fixed policy needs an assignment")
        groups = [tuple(g) for g in assignment]
    elif policy == "optimal":
        groups = optimal_groups(cfg, topology, assignment or ())
    else:
        start = grand_coalition(M) if cfg.initial == "grand" else singletons(M)
        groups = form(start, np.zeros(M))
    state = NetworkState.from_groups(groups, cfg.K)

    reform = cfg.reform_period if policy == "coalition" else 0
    totals = dict(tx=0, coll=0, succ=0, arr=0, drops=0)
    energy = 0.0
    queue_sum = 0.0
    size_sum = 0.0
    n_sum = 0.0
    log_rows = [] if event_log is not None else None

    done = 0
    while done < slots:
        if reform and done and done % reform == 0:
            groups = form(state.groups, state.member_queues)
            state = NetworkState.from_groups(groups, cfg.K, state.member_queues, state.slot)
        n = min(CHUNK, slots - done)
        if reform:
            n = min(n, reform - done % reform)
        arrivals = rng.random((n, M)) < cfg.p
        preambles = rng.integers(0, cfg.mu, size=(n, state.N))
        e_sr_head = _sr_to_head(state, topology)
        mean_size = float(state.sizes @ state.sizes) / M
        per_slot = [np.zeros(n, dtype=np.int64) for _ in range(3)] + [np.zeros(n), np.zeros(n, dtype=np.int64)]
        _run_chunk(state.queue, state.member_queues, state.coal_of, state.heads, state.sizes, arrivals,
                   preambles, cfg.K, cfg.mu, topology.e_lr, e_sr_head, *per_slot)
        n_tx, n_won, n_drop, e_slot, backlog = per_slot
        state.slot += n
        totals["tx"] += int(n_tx.sum())
        totals["succ"] += int(n_won.sum())
        totals["coll"] += int((n_tx - n_won).sum())
        totals["drops"] += int(n_drop.sum())
        energy += float(e_slot.sum())
        queue_sum += float(backlog.sum())
        if log_rows is not None:
            start = state.slot - n
            arr_count = arrivals.sum(axis=1)
            for i in range(n):
                log_rows.append([start + i, int(arr_count[i]), int(n_tx[i]), int(n_won[i]),
                                 int(n_tx[i] - n_won[i]), int(n_drop[i]), repr(float(e_slot[i]))])
        totals["arr"] += int(arrivals.sum())
        size_sum += mean_size * n
        n_sum += state.N * n
        done += n

    moves = sum(t.iterations for t in traces)
    final_n = state.N
    mean_queue = queue_sum / (slots * M)
    mean_size = size_sum / slots
    metrics = RunMetrics(
        fail_ratio=totals["coll"] / totals["tx"] if totals["tx"] else 0.0,
        energy_per_mtd=energy / M,
        mean_queue=mean_queue,
        utility=realized_utility(cfg, mean_queue, energy, totals["succ"], mean_size),
        iterations=moves,
        moves_per_coalition=moves / final_n if traces else 0.0,
        drops=totals["drops"],
        transmissions=totals["tx"],
        collisions=totals["coll"],
        successes=totals["succ"],
        arrivals=totals["arr"],
        slots=slots,
        M=M,
        num_coalitions=n_sum / slots,
        mean_coalition_size=mean_size,
        formation_passes=sum(len(t.passes) for t in traces),
    )
    if log_rows is not None:
        with open(event_log, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EVENT_FIELDS)
            w.writerows(log_rows)
    return ScenarioRun(metrics, [tuple(g) for g in state.groups], topology, traces)


def run_scenario(cfg: SystemConfig, policy: str, slots: int, **kwargs) -> RunMetrics:
    return simulate(cfg, policy, slots, **kwargs).metrics
