"""Spatial deployment, link gains, achievable rates and per-packet energies.

The base station sits at the origin of a square cell of side ``cell_side``.
Fading is quasi-static: one unit-mean exponential power sample per link per
run, and short-range links are reciprocal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import SystemConfig


@dataclass(frozen=True)
class LinkGain:
    gain: float
    distance: float
    fading: float

    @classmethod
    def draw(cls, distance: float, cfg: SystemConfig, rng: np.random.Generator) -> "LinkGain":
        xi = float(rng.exponential(1.0))
        return cls(link_gain(distance, xi, cfg), distance, xi)


def link_gain(distance, fading, cfg: SystemConfig):
    return cfg.H0 * np.power(distance, -cfg.nu) * fading


def _inside(points: np.ndarray, half: float) -> np.ndarray:
    return np.all(np.abs(points) <= half, axis=-1)


def draw_cluster_centers(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Poisson number of uniformly placed centers; redrawn until at least one."""
    lam = cfg.cluster_density * cfg.area
    n = 0
    while n == 0:
        n = int(rng.poisson(lam))
    half = cfg.cell_side / 2.0
    return rng.uniform(-half, half, size=(n, 2))


def place_mtds(cfg: SystemConfig, rng: np.random.Generator, mode: str | None = None) -> np.ndarray:
    """Return an (M, 2) array of MTD positions in meters relative to the BS."""
    mode = mode or cfg.placement
    half = cfg.cell_side / 2.0
    if mode == "uniform":
        return rng.uniform(-half, half, size=(cfg.M, 2))
    if mode != "cluster":
        raise ValueError(f"unknown placement mode {mode!r}")

    centers = draw_cluster_centers(cfg, rng)
    n = len(centers)
    counts = rng.poisson(cfg.M / n, size=n)
    labels = np.repeat(np.arange(n), counts)
    # force exactly M members by resampling the assignment
    if len(labels) > cfg.M:
        labels = np.sort(rng.choice(labels, size=cfg.M, replace=False))
    elif len(labels) < cfg.M:
        extra = rng.integers(0, n, size=cfg.M - len(labels))
        labels = np.sort(np.concatenate([labels, extra]))

    pos = centers[labels] + rng.normal(0.0, cfg.cluster_sigma, size=(cfg.M, 2))
    outside = ~_inside(pos, half)
    while outside.any():
        pos[outside] = centers[labels[outside]] + rng.normal(0.0, cfg.cluster_sigma, size=(outside.sum(), 2))
        outside = ~_inside(pos, half)
    return pos


def shannon_rate(P, gain, interference, cfg: SystemConfig):
    """B_z log2(1 + P h / (N0 B_z + I)); noise is integrated over the subcarrier."""
    snr = np.asarray(P, dtype=float) * gain / (cfg.N0 * cfg.B_z + interference)
    return cfg.B_z * np.log2(1.0 + snr)


def cellular_rate(P, gain, interference, cfg: SystemConfig):
    return shannon_rate(P, gain, interference, cfg)


def sr_rate(P_SR, gain, interference, cfg: SystemConfig):
    return shannon_rate(P_SR, gain, interference, cfg)


def link_feasible(rate, cfg: SystemConfig):
    """True iff one B-bit packet fits in a slot, i.e. rate >= B / T."""
    rate = np.asarray(rate, dtype=float)
    ok = rate * cfg.T >= cfg.B * (1.0 - 1e-12)
    return bool(ok) if ok.ndim == 0 else ok


def per_packet_energy(P: float, rate: float, B: float) -> float:
    if rate <= 0.0:
        raise ValueError("infeasible link")
    return P * B / rate


def expected_ra_energy(E_per_packet: float, Ps: float) -> float:
    """Mean energy until the first success when each attempt succeeds w.p. Ps."""
    if Ps <= 0.0:
        raise ValueError("zero success probability")
    if Ps > 1.0:
        raise ValueError("success probability above 1")
    return E_per_packet / Ps


@dataclass(frozen=True)
class Topology:
    """Per-run link quantities: cellular energy per MTD and pairwise M2M tables.

    ``e_sr[i, j]`` is the per-packet energy for MTD ``i`` sending to ``j``
    (inf where the link cannot carry B bits in T seconds).
    """

    positions: np.ndarray
    e_lr: np.ndarray
    sr_rate: np.ndarray
    sr_feasible: np.ndarray
    e_sr: np.ndarray
    lr_rate: np.ndarray

    @property
    def M(self) -> int:
        return len(self.e_lr)

    @classmethod
    def build(cls, cfg: SystemConfig, rng: np.random.Generator,
              positions: np.ndarray | None = None) -> "Topology":
        if positions is None:
            positions = place_mtds(cfg, rng)
        M = len(positions)
        d_bs = np.maximum(np.hypot(positions[:, 0], positions[:, 1]), 1.0)
        lr_gain = link_gain(d_bs, rng.exponential(1.0, size=M), cfg)
        lr_rate = cellular_rate(cfg.P_LR, lr_gain, cfg.interference, cfg)
        e_lr = cfg.P_LR * cfg.B / lr_rate

        diff = positions[:, None, :] - positions[None, :, :]
        d = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), 1.0)
        xi = rng.exponential(1.0, size=(M, M))
        xi = np.triu(xi, 1)
        xi = xi + xi.T
        rate = sr_rate(cfg.P_SR, link_gain(d, xi, cfg), cfg.interference, cfg)
        np.fill_diagonal(rate, np.inf)
        feasible = link_feasible(rate, cfg)
        with np.errstate(divide="ignore"):
            e_sr = np.where(feasible, cfg.P_SR * cfg.B / rate, np.inf)
        np.fill_diagonal(e_sr, 0.0)
        return cls(positions, e_lr, rate, feasible, e_sr, lr_rate)

    @classmethod
    def from_energies(cls, e_lr, e_sr, feasible=None, positions=None) -> "Topology":
        """Hand-built topology for micro-instances (energies in joules)."""
        e_lr = np.asarray(e_lr, dtype=float)
        M = len(e_lr)
        e_sr = np.broadcast_to(np.asarray(e_sr, dtype=float), (M, M)).copy()
        np.fill_diagonal(e_sr, 0.0)
        if feasible is None:
            feasible = np.isfinite(e_sr)
        feasible = np.asarray(feasible, dtype=bool).copy()
        np.fill_diagonal(feasible, True)
        if positions is None:
            positions = np.zeros((M, 2))
        rate = np.full((M, M), np.inf)
        return cls(np.asarray(positions, float), e_lr, rate, feasible, e_sr, np.full(M, np.inf))

    def group_feasible(self, members) -> bool:
        idx = np.asarray(members)
        return bool(self.sr_feasible[np.ix_(idx, idx)].all())

    def cross_feasible(self, a, b) -> bool:
        return bool(self.sr_feasible[np.ix_(np.asarray(a), np.asarray(b))].all())

    def dump_csv(self, path: str | Path) -> None:
        """Positions plus the pairwise M2M feasibility matrix, one row per MTD."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mtd", "x_m", "y_m", "e_lr_J"] + [f"feasible_{j}" for j in range(self.M)])
            for i in range(self.M):
                x, y = self.positions[i]
                w.writerow([i, f"{x:.3f}", f"{y:.3f}", f"{self.e_lr[i]:.6e}"]
                           + [int(v) for v in self.sr_feasible[i]])
