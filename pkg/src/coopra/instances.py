"""Hand-built instances used by tests and examples."""

from __future__ import annotations

import numpy as np

from .channel import Topology
from .model import SystemConfig


def farsighted_pair() -> tuple[SystemConfig, Topology, np.ndarray]:
    """Two MTDs whose merged coalition is stable only for patient players.

    Each MTD holds 4 requests and spends 2.5 mJ per cellular packet; short
    range is free.  Merging raises today's backlog but drains faster with
    2 preambles, so it pays off once the discount factor exceeds 0.55.
    Returns (config at delta = 0.9, topology, member queues).
    """
    cfg = SystemConfig(M=2, mu=2, p=0.05, K=10, alpha=1.0, beta=0.5, gamma=0.0, delta=0.9)
    topology = Topology.from_energies([2.5e-3, 2.5e-3], 0.0)
    return cfg, topology, np.array([4.0, 4.0])
