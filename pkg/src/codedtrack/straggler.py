"""Probabilistic worker-availability model with exponential unavailability periods."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConfigurationError


def sample_unavailability(beta: float, rng: np.random.Generator, size: int | None = None):
    """Exponential unavailability duration with mean 1/beta seconds.

    beta scales the tail as a rate: beta=10 means workers are unavailable for
    0.1 seconds on average.  With ``size`` set, returns a vector of draws.
    """
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    return rng.exponential(1.0 / beta, size=size)


@dataclass
class AvailabilityState:
    """Per-worker completion clock for the renewal availability process.

    Each worker cycles back-to-back through "compute for dt seconds" and
    "unavailable for Exp(1/beta) seconds"; it contributes to the step in which
    a computation completes.  busy_until[w] holds the next completion time and
    is nondecreasing.  All workers start available (clocks at zero).
    """

    n_workers: int
    beta: float
    dt: float
    forced: bool = False
    busy_until: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.n_workers < 1:
            raise ConfigurationError(f"n_workers must be >= 1, got {self.n_workers}")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.beta <= 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        self.busy_until = np.zeros(self.n_workers)


def step_available(state: AvailabilityState, t_index: int, rng: np.random.Generator) -> list[int]:
    """Worker ids (ascending) that deliver a result during step t_index.

    A worker participates iff its completion clock is due by the step's
    wall-clock time t_index * dt; its clock then advances by the unavailability
    draw plus one task duration.  With ``forced`` set, every worker
    participates and no clock advances (test hook / straggling disabled).
    """
    if state.forced:
        return list(range(state.n_workers))
    now = t_index * state.dt
    due = np.flatnonzero(state.busy_until <= now)
    if due.size:
        draws = sample_unavailability(state.beta, rng, size=due.size)
        state.busy_until[due] += state.dt + draws
    return due.tolist()
