"""Linear-Gaussian process and observation models, ground-truth simulation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Inconsistent dimensions or invalid model/experiment parameters."""


class FilterError(RuntimeError):
    """Numerical failure inside a filter update (e.g. singular innovation covariance)."""


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def check_symmetric_psd(M: np.ndarray, name: str, tol: float = 1e-10) -> None:
    """Raise ConfigurationError unless M is symmetric PSD within tol (relative)."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ConfigurationError(f"{name} is not symmetric within tolerance {tol}")
    if M.size and np.min(np.linalg.eigvalsh(symmetrize(M))) < -tol * scale:
        raise ConfigurationError(f"{name} is not PSD within tolerance {tol}")


def sampling_factor(cov: np.ndarray, jitter: float = 1e-12) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == cov, for Gaussian sampling.

    Uses a Cholesky factorization, retrying with a jitter of ``jitter * I``
    when the matrix is PSD but rank deficient.  An exactly-zero covariance
    maps to a zero factor so that noise-free models stay exact.
    """
    cov = np.asarray(cov, dtype=float)
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("covariance is not PSD: jittered Cholesky failed") from exc


@dataclass
class ProcessModel:
    """Discrete-time process x_t = F x_{t-1} + q_t, q_t ~ N(0, Q)."""

    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self) -> None:
        self.F = np.asarray(self.F, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.F.ndim != 2 or self.F.shape[0] != self.F.shape[1]:
            raise ConfigurationError(f"F must be square, got {self.F.shape}")
        if self.Q.shape != self.F.shape:
            raise ConfigurationError(f"Q shape {self.Q.shape} != F shape {self.F.shape}")
        check_symmetric_psd(self.Q, "Q", tol=1e-10)
        self._q_factor = sampling_factor(self.Q)

    @property
    def d(self) -> int:
        return self.F.shape[0]


@dataclass
class Observer:
    """One observer: z = H x + r, r ~ N(0, R).  Ids are 0-based and unique."""

    id: int
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.R.shape != (self.H.shape[0], self.H.shape[0]):
            raise ConfigurationError(
                f"observer {self.id}: R shape {self.R.shape} does not match "
                f"{self.H.shape[0]} observation rows"
            )
        check_symmetric_psd(self.R, f"observer {self.id} R", tol=1e-10)
        self._r_factor = sampling_factor(self.R)

    @property
    def h(self) -> int:
        return self.H.shape[0]


class ObservationModel:
    """All observers stacked in id order: H (h x d), block-diagonal R (h x h)."""

    def __init__(self, observers: list[Observer]):
        if not observers:
            raise ConfigurationError("need at least one observer")
        observers = sorted(observers, key=lambda o: o.id)
        ids = [o.id for o in observers]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate observer ids: {ids}")
        d = observers[0].H.shape[1]
        if any(o.H.shape[1] != d for o in observers):
            raise ConfigurationError("observers disagree on state dimension")
        self.observers = tuple(observers)
        self.d = d
        self.H = np.vstack([o.H for o in observers])
        self.h = self.H.shape[0]
        self.R = np.zeros((self.h, self.h))
        self.offsets: list[slice] = []
        start = 0
        for o in observers:
            sl = slice(start, start + o.h)
            self.R[sl, sl] = o.R
            self.offsets.append(sl)
            start += o.h
        self._r_factor = np.zeros((self.h, self.h))
        for o, sl in zip(self.observers, self.offsets):
            self._r_factor[sl, sl] = o._r_factor

    def observe(self, x: np.ndarray, rng: np.random.Generator) -> "StackedObservation":
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ConfigurationError(f"state shape {x.shape} != ({self.d},)")
        z = self.H @ x + self._r_factor @ rng.standard_normal(self.h)
        return StackedObservation(z=z, H=self.H, R=self.R, offsets=self.offsets)


@dataclass
class StackedObservation:
    """Concatenated observation vector for one time step, with its stacked model."""

    z: np.ndarray
    H: np.ndarray
    R: np.ndarray
    offsets: list[slice]

    def block(self, k: int) -> np.ndarray:
        """Observation of the k-th observer (by position in id order)."""
        return self.z[self.offsets[k]]


@dataclass
class Trajectory:
    states: list[np.ndarray]
    observations: list[StackedObservation]

    def __len__(self) -> int:
        return len(self.states)


def step_state(model: ProcessModel, x_prev: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Advance the state one step: F @ x_prev plus a process-noise draw."""
    x_prev = np.asarray(x_prev, dtype=float)
    if x_prev.shape != (model.d,):
        raise ConfigurationError(f"state shape {x_prev.shape} != ({model.d},)")
    return model.F @ x_prev + model._q_factor @ rng.standard_normal(model.d)


def observe(observers: list[Observer], x: np.ndarray, rng: np.random.Generator) -> StackedObservation:
    """Noisy stacked observation of x, blocks in ascending observer-id order."""
    return ObservationModel(observers).observe(x, rng)


def simulate(
    model: ProcessModel,
    observers: list[Observer],
    x0: np.ndarray,
    T: int,
    rng: np.random.Generator,
) -> Trajectory:
    """Ground truth and observations for T steps; x0 itself is not included."""
    if T < 1:
        raise ConfigurationError(f"T must be >= 1, got {T}")
    obs_model = ObservationModel(observers)
    x = np.asarray(x0, dtype=float)
    states, observations = [], []
    for _ in range(T):
        x = step_state(model, x, rng)
        states.append(x)
        observations.append(obs_model.observe(x, rng))
    return Trajectory(states=states, observations=observations)


def simulate_arrays(
    model: ProcessModel,
    obs_model: ObservationModel,
    x0: np.ndarray,
    T: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Bulk trajectory generation: (T, d) states and (T, h) stacked observations.

    Noise is drawn in two vectorized blocks (state noise first), so the stream
    layout differs from simulate(); both are deterministic for a given rng state.
    """
    qs = rng.standard_normal((T, model.d)) @ model._q_factor.T
    rs = rng.standard_normal((T, obs_model.h)) @ obs_model._r_factor.T
    states = np.empty((T, model.d))
    x = np.asarray(x0, dtype=float)
    for t in range(T):
        x = model.F @ x + qs[t]
        states[t] = x
    Z = states @ obs_model.H.T + rs
    return states, Z
