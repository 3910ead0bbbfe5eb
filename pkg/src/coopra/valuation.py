"""Coalition values: current-slot payoff plus discounted expected future payoff.

Values are payoffs (higher is better), so queue backlog and energy enter
with a negative sign.  Energies are converted to value units with
``cfg.energy_scale`` (millijoules by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Topology, expected_ra_energy
from .model import SystemConfig
from .stochastics import build_kernel, state_distributions, worstcase_departure_prob


class CoalitionInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class EnergyContext:
    """Energies in joules.

    e_lr_head: expected per-request cellular energy of the head.
    e_sr: member-to-head energy, scalar or one entry per member (0 for the head).
    """

    e_lr_head: float
    e_sr: float | np.ndarray = 0.0

    def sr_vector(self, size: int) -> np.ndarray:
        e = np.broadcast_to(np.asarray(self.e_sr, dtype=float), (size,))
        if not np.all(np.isfinite(e)):
            raise CoalitionInfeasible("coalition infeasible")
        return e


@dataclass(frozen=True)
class ValueBreakdown:
    deterministic: np.ndarray
    future: np.ndarray
    total: np.ndarray
    n_delta: int


def horizon(delta: float, eps: float) -> int:
    """Smallest n with delta**n < eps."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    n = 1
    while delta**n >= eps:
        n += 1
    return n


def _size(coalition) -> int:
    if isinstance(coalition, (int, np.integer)):
        return int(coalition)
    members = getattr(coalition, "members", coalition)
    return len(members)


def altruistic_current_value(coalition, Q: float, cfg: SystemConfig, energy_ctx: EnergyContext) -> float:
    s = _size(coalition)
    if s < 1:
        raise ValueError("empty coalition")
    if not 0 <= Q <= cfg.K:
        raise ValueError("Q outside [0, K]")
    e_sr = float(np.mean(energy_ctx.sr_vector(s)))
    energy = cfg.energy_scale * (energy_ctx.e_lr_head / s + e_sr)
    return -cfg.alpha * Q - cfg.beta * energy - cfg.gamma * s


def selfish_current_value(coalition, member_queues: Sequence[float], cfg: SystemConfig,
                          energy_ctx: EnergyContext, prefs=None) -> np.ndarray:
    q = np.asarray(member_queues, dtype=float)
    s = _size(coalition)
    if len(q) != s:
        raise ValueError("one queue per member required")
    alpha, beta, gamma = _prefs(cfg, prefs, s)
    head_share = 1.0 / s
    energy = cfg.energy_scale * (head_share * energy_ctx.e_lr_head + energy_ctx.sr_vector(s))
    return -alpha * q - beta * energy - gamma * s


def _prefs(cfg: SystemConfig, prefs, s: int):
    if prefs is None:
        return cfg.alpha, cfg.beta, cfg.gamma
    return tuple(np.broadcast_to(np.asarray(x, dtype=float), (s,)) for x in prefs)


def expected_member_queues(member_queues: Sequence[float], coalition_dists: np.ndarray, K: int) -> np.ndarray:
    """Expected per-member backlog under round-robin service.

    Members share the expected change of the coalition queue evenly, so the
    member expectations add up to the coalition expectation.  Row n is the
    expectation after n slots.
    """
    x = np.asarray(member_queues, dtype=float)
    s = len(x)
    mean_q = coalition_dists @ np.arange(coalition_dists.shape[1])
    out = x[None, :] + (mean_q - mean_q[0])[:, None] / s
    return np.clip(out, 0.0, K)


def expected_future_value(coalition, Q0: int, cfg: SystemConfig, kernel, energy_ctx: EnergyContext,
                          member_queues: Sequence[float] | None = None, prefs=None):
    """Discounted expected payoff over slots 1..n_delta.

    Altruistic mode returns a scalar; selfish mode needs ``member_queues``
    and returns one entry per member.
    """
    n_delta = horizon(cfg.delta, cfg.horizon_eps)
    if cfg.delta == 0.0:
        return 0.0 if cfg.mode == "altruistic" else np.zeros(_size(coalition))
    dists = state_distributions(kernel, int(Q0), n_delta)
    disc = cfg.delta ** np.arange(1, n_delta + 1)
    s = _size(coalition)
    if cfg.mode == "altruistic":
        states = np.arange(cfg.K + 1)
        u_d = np.array([altruistic_current_value(s, q, cfg, energy_ctx) for q in states])
        return float(disc @ (dists[1:] @ u_d))
    if member_queues is None:
        raise ValueError("selfish mode needs member queues")
    traj = expected_member_queues(member_queues, dists, cfg.K)
    u = np.array([selfish_current_value(s, traj[n], cfg, energy_ctx, prefs) for n in range(1, n_delta + 1)])
    return disc @ u


def total_value(coalition, Q0: int, cfg: SystemConfig, kernel, energy_ctx: EnergyContext,
                member_queues: Sequence[float] | None = None, prefs=None) -> ValueBreakdown:
    """Per-member payoff vector; altruistic members all receive the coalition value."""
    s = _size(coalition)
    n_delta = horizon(cfg.delta, cfg.horizon_eps)
    if cfg.mode == "altruistic":
        det = np.full(s, altruistic_current_value(s, Q0, cfg, energy_ctx))
        fut = np.full(s, expected_future_value(s, Q0, cfg, kernel, energy_ctx))
    else:
        if member_queues is None:
            raise ValueError("selfish mode needs member queues")
        det = selfish_current_value(s, member_queues, cfg, energy_ctx, prefs)
        fut = np.asarray(expected_future_value(s, Q0, cfg, kernel, energy_ctx, member_queues, prefs))
    return ValueBreakdown(det, fut, det + fut, n_delta)


class CoalitionValuer:
    """Cached per-member values of arbitrary coalitions in one network.

    Coalition queues start at the member-queue sum (clamped to K, rounded to
    a kernel state); the departure probability is the worst-case one, so a
    coalition's value does not depend on how the other MTDs are grouped.
    """

    def __init__(self, cfg: SystemConfig, topology: Topology, member_queues: Sequence[float] | None = None,
                 prefs=None, M: int | None = None):
        self.cfg = cfg
        self.topology = topology
        self.M = M if M is not None else topology.M
        self.member_queues = np.zeros(self.M) if member_queues is None else np.asarray(member_queues, float)
        self.prefs = None if prefs is None else tuple(np.asarray(x, float) for x in prefs)
        self.n_delta = horizon(cfg.delta, cfg.horizon_eps)
        self._disc = cfg.delta ** np.arange(1, self.n_delta + 1)
        self._dists: dict[tuple[int, int], np.ndarray] = {}
        self._cache: dict[tuple[int, ...], ValueBreakdown] = {}
        self.evaluations = 0

    def depart_prob(self, size: int) -> float:
        return worstcase_departure_prob(self.M, size, self.cfg.mu)

    def coalition_queue(self, members: Sequence[int]) -> int:
        q = float(self.member_queues[list(members)].sum())
        return int(round(min(q, self.cfg.K)))

    def energy_context(self, members: Sequence[int]) -> EnergyContext:
        head = members[0]
        e_sr = self.topology.e_sr[list(members), head]
        e_lr = expected_ra_energy(float(self.topology.e_lr[head]), self.depart_prob(len(members)))
        return EnergyContext(e_lr, e_sr)

    def distributions(self, size: int, q0: int) -> np.ndarray:
        key = (size, q0)
        d = self._dists.get(key)
        if d is None:
            kernel = build_kernel(size, self.cfg.p, self.depart_prob(size), self.cfg.K)
            d = state_distributions(kernel, q0, self.n_delta)
            self._dists[key] = d
        return d

    def breakdown(self, members: Sequence[int]) -> ValueBreakdown:
        members = tuple(sorted(members))
        hit = self._cache.get(members)
        if hit is not None:
            return hit
        self.evaluations += 1
        cfg = self.cfg
        s = len(members)
        ctx = self.energy_context(members)
        e_sr = ctx.sr_vector(s)
        q0 = self.coalition_queue(members)
        dists = self.distributions(s, q0)
        if cfg.mode == "altruistic":
            alpha, beta, gamma = self._weights(members, reduce=True)
            const = beta * cfg.energy_scale * (ctx.e_lr_head / s + e_sr.mean()) + gamma * s
            det = -alpha * q0 - const
            exp_q = dists[1:] @ np.arange(cfg.K + 1)
            fut = float(self._disc @ (-alpha * exp_q - const))
            det_v, fut_v = np.full(s, det), np.full(s, fut)
        else:
            alpha, beta, gamma = self._weights(members, reduce=False)
            const = beta * cfg.energy_scale * (ctx.e_lr_head / s + e_sr) + gamma * s
            qm = self.member_queues[list(members)]
            det_v = -alpha * qm - const
            traj = expected_member_queues(qm, dists, cfg.K)
            fut_v = self._disc @ (-alpha * traj[1:] - const)
        out = ValueBreakdown(det_v, fut_v, det_v + fut_v, self.n_delta)
        self._cache[members] = out
        return out

    def values(self, members: Sequence[int]) -> np.ndarray:
        return self.breakdown(members).total

    def _weights(self, members, reduce: bool):
        if self.prefs is None:
            return self.cfg.alpha, self.cfg.beta, self.cfg.gamma
        idx = list(members)
        ws = [w[idx] for w in self.prefs]
        return tuple(w.mean() for w in ws) if reduce else tuple(ws)
