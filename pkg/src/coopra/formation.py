"""Sequential merge/split coalition formation and stability analysis.

Each MTD, in id order, takes its most preferable one-step move: stay, split
off a subset of its coalition that contains it, or merge its coalition with
another one.  A move is only available when every MTD that has to agree
(the departing subset for a split, both coalitions for a merge) weakly
gains and the mover strictly gains.  A full pass without any change ends
the run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .channel import Topology
from .model import GameState, Partition, SystemConfig, assert_partition, canonical_groups, make_partition
from .valuation import CoalitionValuer

STAY, SPLIT, MERGE = "stay", "split", "merge"

Group = tuple[int, ...]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: "FormationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Move:
    kind: str
    actor: int
    # split: the departing subset; merge: the other coalition; stay: the actor's coalition
    target: Group

    def apply(self, groups: Sequence[Group]) -> list[Group]:
        own = next(g for g in groups if self.actor in g)
        if self.kind == STAY:
            return list(groups)
        rest = [g for g in groups if g != own]
        if self.kind == SPLIT:
            remainder = tuple(m for m in own if m not in self.target)
            return rest + [self.target, remainder]
        if self.kind == MERGE:
            rest = [g for g in rest if g != self.target]
            return rest + [tuple(sorted(own + self.target))]
        raise ValueError(self.kind)

    def deciders(self, groups: Sequence[Group]) -> Group:
        own = next(g for g in groups if self.actor in g)
        if self.kind == SPLIT:
            return self.target
        if self.kind == MERGE:
            return tuple(sorted(own + self.target))
        return ()

    def affected(self, groups: Sequence[Group]) -> Group:
        own = next(g for g in groups if self.actor in g)
        if self.kind == MERGE:
            return tuple(sorted(own + self.target))
        if self.kind == SPLIT:
            return own
        return ()


def split_count(size: int) -> int:
    """Number of k-subsets (k < size) of a coalition containing a given member."""
    return 2 ** (size - 1) - 1


def _tol(v) -> np.ndarray:
    return 1e-9 * np.maximum(1.0, np.abs(v))


def compare(new: np.ndarray, old: np.ndarray) -> str:
    """'strict' if every entry gains, 'weak' if none loses, else 'none'."""
    tol = _tol(old)
    if np.all(new > old + tol):
        return "strict"
    if np.all(new >= old - tol):
        return "weak"
    return "none"


def enumerate_moves(state: GameState | Sequence[Group], m: int, topology: Topology) -> list[Move]:
    groups = _groups(state)
    own = next(g for g in groups if m in g)
    moves = [Move(STAY, m, own)]
    others = [x for x in own if x != m]
    for k in range(1, len(own)):
        for rest in combinations(others, k - 1):
            moves.append(Move(SPLIT, m, tuple(sorted((m,) + rest))))
    for g in groups:
        if g != own and topology.cross_feasible(own, g):
            moves.append(Move(MERGE, m, g))
    return moves


def _groups(state) -> list[Group]:
    if isinstance(state, GameState):
        return [c.members for c in state.partition.coalitions]
    if isinstance(state, Partition):
        return state.groups()
    return [tuple(sorted(g)) for g in state]


def _member_values(valuer: CoalitionValuer, group: Group, members: Iterable[int]) -> np.ndarray:
    vals = valuer.values(group)
    pos = {x: i for i, x in enumerate(group)}
    return np.array([vals[pos[x]] for x in members])


def _values_after(valuer, groups, move, who) -> tuple[np.ndarray, np.ndarray]:
    new_groups = move.apply(groups)
    where_old = {x: g for g in groups for x in g}
    where_new = {x: g for g in new_groups for x in g}
    old = np.array([_member_values(valuer, where_old[x], [x])[0] for x in who])
    new = np.array([_member_values(valuer, where_new[x], [x])[0] for x in who])
    return new, old


def is_profitable(state, move: Move, valuer: CoalitionValuer, scope: str = "affected") -> str:
    """Profitability of ``move`` over every MTD whose coalition changes.

    ``scope="deciders"`` restricts the test to the MTDs whose consent the
    formation algorithm asks for.
    """
    if move.kind == STAY:
        return "none"
    groups = _groups(state)
    who = move.affected(groups) if scope == "affected" else move.deciders(groups)
    new, old = _values_after(valuer, groups, move, who)
    return compare(new, old)


@dataclass
class TraceRecord:
    iteration: int
    pass_no: int
    actor: int
    kind: str
    target: Group
    value_before: float
    value_after: float


@dataclass
class PassStats:
    pass_no: int
    merge_attempts: int = 0
    split_attempts: int = 0
    split_bound: int = 0
    moves: int = 0


@dataclass
class FormationTrace:
    M: int
    records: list[TraceRecord] = field(default_factory=list)
    passes: list[PassStats] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def merge_bound(self) -> int:
        return self.M * (self.M - 1) // 2

    def rows(self) -> list[tuple]:
        return [(r.iteration, r.pass_no, r.actor, r.kind, " ".join(map(str, r.target)),
                 repr(r.value_before), repr(r.value_after)) for r in self.records]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "pass", "actor", "move", "target", "value_before", "value_after"])
            w.writerows(self.rows())


def _best_move(groups: list[Group], m: int, valuer: CoalitionValuer, topology: Topology,
               stats: PassStats, paired: np.ndarray) -> tuple[Move, float, float] | None:
    own = next(g for g in groups if m in g)
    idx = own.index(m)
    current = valuer.values(own)[idx]
    tol = _tol(current)
    own_vals = dict(zip(own, valuer.values(own)))
    best = None
    best_key = None

    others = [x for x in own if x != m]
    stats.split_bound += split_count(len(own))
    for k in range(1, len(own)):
        for rest in combinations(others, k - 1):
            sub = tuple(sorted((m,) + rest))
            stats.split_attempts += 1
            vals = valuer.values(sub)
            mine = vals[sub.index(m)]
            if mine <= current + tol:
                continue
            old = np.array([own_vals[x] for x in sub])
            if np.any(vals < old - _tol(old)):
                continue
            key = (-mine, len(sub), 1, sub)
            if best_key is None or key < best_key:
                best, best_key = Move(SPLIT, m, sub), key

    for j, g in enumerate(groups):
        if g == own or not topology.cross_feasible(own, g):
            continue
        # one attempt per pass for each MTD pair: skip targets whose members m has all been tried with
        targets = list(g)
        if paired[m, targets].all():
            continue
        paired[m, targets] = True
        paired[targets, m] = True
        stats.merge_attempts += 1
        union = tuple(sorted(own + g))
        vals = valuer.values(union)
        mine = vals[union.index(m)]
        if mine <= current + tol:
            continue
        old = np.concatenate([valuer.values(own), valuer.values(g)])
        new = np.concatenate([_member_values(valuer, union, own), _member_values(valuer, union, g)])
        if np.any(new < old - _tol(old)):
            continue
        key = (-mine, len(union), 2, g)
        if best_key is None or key < best_key:
            best, best_key = Move(MERGE, m, g), key

    if best is None:
        return None
    return best, float(current), float(-best_key[0])


def run_formation(initial: GameState | Sequence[Group], cfg: SystemConfig, topology: Topology,
                  member_queues: Sequence[float] | None = None, prefs=None,
                  valuer: CoalitionValuer | None = None) -> tuple[Partition, FormationTrace]:
    """Iterate passes over the MTDs until a pass leaves the partition unchanged.

    Starts from any partition (singletons, the grand coalition or a previous
    outcome for a warm start).  Raises ConvergenceError after
    ``cfg.max_passes`` passes.
    """
    groups = [tuple(sorted(g)) for g in _groups(initial)]
    M = sum(len(g) for g in groups)
    if member_queues is None:
        member_queues = initial.member_queues if isinstance(initial, GameState) and initial.member_queues else np.zeros(M)
    member_queues = np.asarray(member_queues, dtype=float)
    assert_partition(groups, M)
    for g in groups:
        if not topology.group_feasible(g):
            raise ValueError(f"initial coalition {g} has infeasible short-range links")
    if valuer is None:
        valuer = CoalitionValuer(cfg, topology, member_queues, prefs, M=M)
    trace = FormationTrace(M)
    for pass_no in range(1, cfg.max_passes + 1):
        stats = PassStats(pass_no)
        paired = np.zeros((M, M), dtype=bool)
        for m in range(M):
            found = _best_move(groups, m, valuer, topology, stats, paired)
            if found is None:
                continue
            move, before, after = found
            groups = move.apply(groups)
            assert_partition(groups, M)
            stats.moves += 1
            trace.records.append(TraceRecord(len(trace.records) + 1, pass_no, m, move.kind,
                                             move.target, before, after))
        trace.passes.append(stats)
        if stats.moves == 0:
            return make_partition(groups, member_queues, cfg.K), trace
    raise ConvergenceError(f"no convergence after {cfg.max_passes} passes", trace)


@dataclass(frozen=True)
class Violation:
    kind: str
    coalition: Group
    deviation: Group
    gains: tuple[float, ...]


def check_stable(partition, valuer: CoalitionValuer, topology: Topology | None = None) -> tuple[bool, list[Violation]]:
    """Exhaustive deviation scan.

    A deviation (a proper subset leaving its coalition, or two coalitions
    merging) violates stability when no deciding member loses and at least
    one strictly gains.
    """
    topology = topology or valuer.topology
    groups = canonical_groups(_groups(partition))
    violations = []

    def profitable(new, old):
        tol = _tol(old)
        return bool(np.all(new >= old - tol) and np.any(new > old + tol))

    for g in groups:
        vals_g = dict(zip(g, valuer.values(g)))
        for k in range(1, len(g)):
            for sub in combinations(g, k):
                new = valuer.values(sub)
                old = np.array([vals_g[x] for x in sub])
                if profitable(new, old):
                    violations.append(Violation(SPLIT, g, sub, tuple(new - old)))
    for a, b in combinations(groups, 2):
        if not topology.cross_feasible(a, b):
            continue
        union = tuple(sorted(a + b))
        new = valuer.values(union)
        old_map = {**dict(zip(a, valuer.values(a))), **dict(zip(b, valuer.values(b)))}
        old = np.array([old_map[x] for x in union])
        if profitable(new, old):
            violations.append(Violation(MERGE, a, b, tuple(new - old)))
    return not violations, violations


def _deviation_holds(dev_det, dev_fut, cur_det, cur_fut) -> bool:
    # stay is preferred when the future loss of deviating covers the current gain
    gain_now = dev_det - cur_det
    future_edge = cur_fut - dev_fut
    slack = future_edge - gain_now
    tol = _tol(cur_det + cur_fut)
    return bool(np.any(slack > tol) or np.all(np.abs(slack) <= tol))


def stability_conditions_hold(partition, valuer: CoalitionValuer) -> bool:
    """Check every deviation through the current-gain versus future-loss inequalities."""
    topology = valuer.topology
    groups = canonical_groups(_groups(partition))

    def parts(group, who):
        bd = valuer.breakdown(group)
        pos = {x: i for i, x in enumerate(group)}
        idx = [pos[x] for x in who]
        return bd.deterministic[idx], bd.future[idx]

    for g in groups:
        for k in range(1, len(g)):
            for sub in combinations(g, k):
                if not _deviation_holds(*parts(sub, sub), *parts(g, sub)):
                    return False
    for a, b in combinations(groups, 2):
        if not topology.cross_feasible(a, b):
            continue
        union = tuple(sorted(a + b))
        cur_det = np.concatenate([parts(a, a)[0], parts(b, b)[0]])
        cur_fut = np.concatenate([parts(a, a)[1], parts(b, b)[1]])
        order = list(a) + list(b)
        if not _deviation_holds(*parts(union, order), cur_det, cur_fut):
            return False
    return True


def delta_threshold(partition, cfg: SystemConfig, topology: Topology, grid: Sequence[float],
                    member_queues: Sequence[float] | None = None, prefs=None) -> float | None:
    """Smallest discount factor on ``grid`` at which ``partition`` meets every stability inequality.

    Returns None when no grid point qualifies.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    if any(not 0.0 < d < 1.0 for d in grid):
        raise ValueError("grid must lie in (0, 1)")
    M = sum(len(g) for g in _groups(partition))
    for d in sorted(grid):
        valuer = CoalitionValuer(cfg.replace(delta=d), topology, member_queues, prefs, M=M)
        if stability_conditions_hold(partition, valuer):
            return d
    return None


def partition_from_state(state: GameState) -> list[Group]:
    return _groups(state)
