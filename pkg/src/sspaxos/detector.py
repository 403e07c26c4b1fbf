"""Heartbeat failure detector and the leader predicate built on it.

Each processor keeps a counter per identifier.  Receiving a heartbeat from
``beta`` resets ``beta``'s counter and ages every other counter by one, up
to the threshold ``W``.  Identifiers whose counter reached ``W`` are
suspected; the leader predicate holds at the smallest unsuspected
identifier.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DetectorState:
    L: tuple
    W: int

    def __post_init__(self) -> None:
        if any(not 0 <= x <= self.W for x in self.L):
            raise ValueError(f"detector counters {self.L} outside [0, {self.W}]")

    def counter(self, mu: int) -> int:
        return self.L[mu - 1]


def default_window(n: int, C: int) -> int:
    return 2 * n * C


def fresh_detector(n: int, W: int) -> DetectorState:
    return DetectorState((0,) * n, W)


def on_heartbeat(st: DetectorState, beta: int) -> DetectorState:
    W = st.W
    counts = tuple(0 if mu == beta else (x + 1 if x < W else x) for mu, x in enumerate(st.L, start=1))
    return DetectorState(counts, W)


def suspects(st: DetectorState) -> frozenset:
    return frozenset(mu for mu, x in enumerate(st.L, start=1) if x == st.W)


def leader(st: DetectorState):
    """Smallest unsuspected identifier, or None when everyone is suspected."""
    for mu, x in enumerate(st.L, start=1):
        if x < st.W:
            return mu
    return None


def theta(alpha: int, st: DetectorState) -> bool:
    return leader(st) == alpha
