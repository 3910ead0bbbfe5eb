import itertools
from pathlib import Path
from itertools import combinations

import numpy as np
import pytest

from coopra.formation import MERGE, SPLIT

DEFAULT_CONFIG = str(Path(__file__).resolve().parents[1] / "configs" / "default.cfg")

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[str(number)] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int(k.rstrip('abcd')), k)):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>3}: {'PASS' if passed else 'FAIL'}  {detail}")


def enumerate_paths(kernel, q_start, q_end, hops):
    """Sum of path products over every explicit hop sequence (test-only oracle)."""
    jumps = range(-1, kernel.coalition_size + 1)
    total = 0.0
    for seq in itertools.product(jumps, repeat=hops):
        q, prob = q_start, 1.0
        for j in seq:
            prob *= kernel.one_hop(q, j)
            q += j
            if prob == 0.0:
                break
        if prob and q == q_end:
            total += prob
    return total


def path_expectation(kernel, q_start, hops, fn):
    """E[fn(Q_hops)] by enumerating all jump sequences."""
    return sum(enumerate_paths(kernel, q_start, q, hops) * fn(q) for q in range(kernel.capacity + 1))


def bell(n):
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


def all_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in all_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_force_violations(groups, valuer, topology, tol=1e-9):
    """Independent scan: every proper subset leaving and every feasible pairwise merge."""
    def vals(g):
        return dict(zip(sorted(g), valuer.values(tuple(sorted(g)))))

    found = []
    current = {}
    for g in groups:
        current.update(vals(g))
    for g in groups:
        for k in range(1, len(g)):
            for sub in combinations(sorted(g), k):
                new = vals(sub)
                gains = [new[m] - current[m] for m in sub]
                if all(x >= -tol * max(1, abs(current[m])) for x, m in zip(gains, sub)) and \
                        any(x > tol * max(1, abs(current[m])) for x, m in zip(gains, sub)):
                    found.append((SPLIT, tuple(sorted(g)), sub))
    for a, b in combinations(sorted(tuple(sorted(g)) for g in groups), 2):
        if not topology.sr_feasible[np.ix_(a, b)].all():
            continue
        new = vals(a + b)
        gains = [new[m] - current[m] for m in a + b]
        if all(x >= -tol * max(1, abs(current[m])) for x, m in zip(gains, a + b)) and \
                any(x > tol * max(1, abs(current[m])) for x, m in zip(gains, a + b)):
            found.append((MERGE, a, b))
    return found
