import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopra.channel import Topology, expected_ra_energy
from coopra.engine import streams
from coopra.model import SystemConfig
from coopra.optimizer import (
    Assignment,
    NoFeasibleSolution,
    discounted_energy,
    exhaustive_search,
    feasible,
    ga_search,
    normalize_labels,
    objective,
    restricted_growth_strings,
)
from coopra.stochastics import build_kernel, exact_departure_prob, state_distributions

from conftest import all_partitions, bell, path_expectation


def test_bell_numbers_and_partition_enumeration():
    for M in range(1, 9):
        strings = list(restricted_growth_strings(M))
        assert len(strings) == bell(M)
        assert len(set(strings)) == len(strings)
    got = {frozenset(frozenset(g) for g in Assignment(s).groups()) for s in restricted_growth_strings(5)}
    want = {frozenset(frozenset(g) for g in p) for p in all_partitions(range(5))}
    assert got == want


@given(st.lists(st.integers(0, 9), min_size=1, max_size=12))
def test_normalized_labels_keep_the_partition(labels):
    norm = normalize_labels(labels)
    assert norm[0] == 0
    assert all(norm[i] <= max(norm[:i]) + 1 for i in range(1, len(norm)))
    for i in range(len(labels)):
        for j in range(len(labels)):
            assert (labels[i] == labels[j]) == (norm[i] == norm[j])


def test_assignment_matrix_constraints():
    a = Assignment.from_groups([(0, 2), (1,)])
    k = a.matrix
    assert k.shape == (3, 2)
    assert np.all(k.sum(axis=1) == 1) and k.sum() == 3
    assert Assignment.from_matrix(k) == a
    with pytest.raises(ValueError):
        Assignment.from_matrix([[1, 1], [0, 1]])
    with pytest.raises(ValueError):
        Assignment.from_matrix([[1, 0], [0, 2]])
    with pytest.raises(ValueError):
        Assignment.from_groups([(0, 1), (1,)])
    with pytest.raises(ValueError):
        Assignment((1, 0))


def test_objective_myopic_is_current_backlog():
    cfg = SystemConfig(delta=0.0)
    q = [3.0, 1.0, 4.0]
    assert objective(Assignment.from_groups([(0, 1), (2,)]), cfg, q) == pytest.approx(8.0)


def test_objective_singletons_is_sum_of_independent_expectations():
    cfg = SystemConfig(delta=0.6)
    q = [0.0, 2.0, 5.0, 1.0]
    hops = 12
    pd = exact_departure_prob(4, cfg.mu)
    k = build_kernel(1, cfg.p, pd, cfg.K)
    disc = cfg.delta ** np.arange(hops + 1)
    expect = sum(disc @ (state_distributions(k, int(x), hops) @ np.arange(cfg.K + 1)) for x in q)
    assert objective(Assignment((0, 1, 2, 3)), cfg, q, hops) == pytest.approx(expect, rel=1e-12)


def test_objective_matches_path_enumeration():
    cfg = SystemConfig(delta=0.7, K=10, mu=4, p=0.3)
    q = [3.0, 3.0, 2.0]
    a = Assignment.from_groups([(0, 1), (2,)])
    hops = 3
    pd = exact_departure_prob(2, cfg.mu)
    oracle = 0.0
    for size, q0 in ((2, 6), (1, 2)):
        k = build_kernel(size, cfg.p, pd, cfg.K)
        oracle += sum(cfg.delta**n * (q0 if n == 0 else path_expectation(k, q0, n, float)) for n in range(hops + 1))
    assert abs(objective(a, cfg, q, hops) - oracle) <= 1e-9


def _line_topology(M, spacing, cfg):
    pos = np.column_stack([np.arange(M) * spacing - spacing * (M - 1) / 2, np.zeros(M)])
    return Topology.build(cfg, np.random.default_rng(0), positions=pos)


def test_singletons_feasible_with_generous_budget():
    cfg = SystemConfig(M=4, E_max=1.0)
    topo = _line_topology(4, 20.0, cfg)
    assert feasible(Assignment((0, 1, 2, 3)), cfg, topo).ok


def test_out_of_range_pair_reported():
    cfg = SystemConfig(M=3, E_max=1e3)
    topo = Topology.build(cfg, np.random.default_rng(0), positions=np.array([[-1e6, 0], [1e6, 0], [0, 0]]))
    result = feasible(Assignment.from_groups([(0, 1), (2,)]), cfg, topo)
    assert not result.ok
    assert any("0-1" in v for v in result.violations)


def test_energy_budget_boundary():
    cfg = SystemConfig(M=2, delta=0.5, mu=4)
    topo = Topology.from_energies([1e-3, 2e-3], 1e-4)
    a = Assignment((0, 0))
    pd = exact_departure_prob(1, 4)
    per_slot = np.array([expected_ra_energy(1e-3, pd) / 2, expected_ra_energy(1e-3, pd) / 2 + 1e-4])
    by_hand = per_slot * (1 + 0.5)  # two slots: weights 1 and delta
    assert discounted_energy(a, cfg, topo, hops=1) == pytest.approx(by_hand, rel=1e-15)
    at_cap = cfg.replace(E_max=float(by_hand.max()))
    assert feasible(a, at_cap, topo, hops=1).ok
    below = cfg.replace(E_max=float(by_hand.max()) * (1 - 1e-9))
    result = feasible(a, below, topo, hops=1)
    assert not result.ok and any("energy over budget: mtd 1" in v for v in result.violations)


def _small(seed, M, mu=3):
    cfg = SystemConfig(M=M, mu=mu, delta=0.5, placement="uniform", cell_side=2000.0,
                       ga_population=40, ga_generations=60)
    topo = Topology.build(cfg, streams(seed)[0])
    q = np.random.default_rng(seed).integers(0, 6, size=M).astype(float)
    return cfg, topo, q


def test_exhaustive_two_and_three():
    cfg, topo, q = _small(1, 2)
    best = exhaustive_search(cfg, topo, q)
    assert best.evaluations == 2
    cands = [objective(Assignment(s), cfg, q) for s in ((0, 0), (0, 1))
             if feasible(Assignment(s), cfg, topo).ok]
    assert best.objective == pytest.approx(min(cands))
    cfg, topo, q = _small(2, 3)
    ex = exhaustive_search(cfg, topo, q)
    assert ex.evaluations == 5
    assert ga_search(cfg, topo, seed=0, member_queues=q).objective == pytest.approx(ex.objective)


def test_exhaustive_cap():
    cfg = SystemConfig(M=11)
    topo = Topology.from_energies([1e-4] * 11, 1e-6)
    with pytest.raises(ValueError, match="instance too large"):
        exhaustive_search(cfg, topo)


def test_ga_matches_exhaustive_on_four_mtds():
    cfg, topo, q = _small(4, 4)
    ex = exhaustive_search(cfg, topo, q)
    assert ex.evaluations == bell(4) == 15
    ga = ga_search(cfg, topo, seed=3, member_queues=q)
    assert ga.objective == pytest.approx(ex.objective, rel=1e-12)
    assert ga.objective >= ex.objective - 1e-12


def test_ga_single_mtd():
    cfg = SystemConfig(M=1, ga_population=4, ga_generations=3)
    topo = Topology.from_energies([1e-4], 0.0)
    assert ga_search(cfg, topo, seed=0).assignment == Assignment((0,))


def test_ga_more_generations_never_worse():
    cfg, topo, q = _small(7, 9, mu=4)
    short = ga_search(cfg.replace(ga_generations=10), topo, seed=5, member_queues=q)
    long = ga_search(cfg.replace(ga_generations=20), topo, seed=5, member_queues=q)
    assert long.objective <= short.objective
    assert all(b <= a for a, b in zip(long.history, long.history[1:]))


def test_ga_deterministic_given_seed():
    cfg, topo, q = _small(8, 8, mu=4)
    a = ga_search(cfg, topo, seed=2, member_queues=q)
    b = ga_search(cfg, topo, seed=2, member_queues=q)
    assert a.assignment == b.assignment and a.history == b.history


def test_infeasible_everywhere_raises():
    cfg = SystemConfig(M=3, E_max=1e-12, ga_population=6, ga_generations=3)
    topo = Topology.from_energies([1e-4] * 3, 1e-6)
    with pytest.raises(NoFeasibleSolution) as info:
        ga_search(cfg, topo, seed=0)
    assert info.value.best_infeasible is not None and info.value.violations
    with pytest.raises(NoFeasibleSolution):
        exhaustive_search(cfg, topo)


def test_feasible_beats_infeasible_in_selection():
    # the only feasible partitions keep MTD 0 and 1 apart
    cfg = SystemConfig(M=3, mu=2, ga_population=10, ga_generations=20)
    feas = np.ones((3, 3), dtype=bool)
    feas[0, 1] = feas[1, 0] = False
    topo = Topology.from_energies([1e-4] * 3, 1e-6, feas)
    best = ga_search(cfg, topo, seed=1)
    assert feasible(best.assignment, cfg, topo).ok


def test_assignment_csv(tmp_path):
    path = tmp_path / "a.csv"
    Assignment.from_groups([(0, 2), (1,)]).to_csv(path)
    assert path.read_text().splitlines() == ["mtd,coalition", "0,0", "1,1", "2,0"]
