"""Uncoded Kalman filter: prediction, sequential per-observer updates, baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    FilterError,
    Observer,
    ProcessModel,
    StackedObservation,
    symmetrize,
)

# Reciprocal-condition threshold below which the innovation covariance is
# treated as singular.
RCOND_MIN = 1e-13


@dataclass
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    t: int = 0


@dataclass
class GainRecord:
    """Kalman gain for one observer, tagged with its generation time."""

    observer_id: int
    K: np.ndarray
    t: int


def predict(model: ProcessModel, fs: FilterState) -> tuple[np.ndarray, np.ndarray]:
    """Predicted mean F x_hat and covariance F P F' + Q."""
    x_tilde = model.F @ fs.x_hat
    P_tilde = model.F @ fs.P @ model.F.T + model.Q
    return x_tilde, P_tilde


def _spd_solve(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve S X = B for symmetric positive-definite S.

    Raises FilterError when the Cholesky factorization fails or the factor's
    diagonal indicates a reciprocal condition below RCOND_MIN.
    """
    try:
        c, lower = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise FilterError("innovation covariance is not positive definite") from exc
    diag = np.diagonal(c)
    # (min/max diag of L)^2 lower-bounds rcond(S) up to a dimension factor.
    if (diag.min() / diag.max()) ** 2 < RCOND_MIN:
        raise FilterError("innovation covariance is numerically singular")
    return scipy.linalg.cho_solve((c, lower), B, check_finite=False)


def kf_update(
    x: np.ndarray,
    P: np.ndarray,
    H: np.ndarray,
    noise_cov: np.ndarray,
    z: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One measurement update of (x, P) with observation z = H x + noise.

    Shared kernel for the uncoded and coded filters; returns the posterior
    pair plus the gain K and innovation covariance S.  P is re-symmetrized.
    """
    PHt = P @ H.T
    S = noise_cov + H @ PHt
    S = symmetrize(S)
    K = _spd_solve(S, PHt.T).T
    x_new = x + K @ (z - H @ x)
    P_new = symmetrize((np.eye(P.shape[0]) - K @ H) @ P)
    return x_new, P_new, K, S


def update_one(
    x_tilde: np.ndarray,
    P_tilde: np.ndarray,
    obs: Observer,
    z_o: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Update a predicted (x, P) with a single observer's measurement."""
    return kf_update(x_tilde, P_tilde, obs.H, obs.R, np.asarray(z_o, dtype=float))


def update_all(model: ProcessModel, fs: FilterState, stacked: StackedObservation) -> FilterState:
    """Predict, then apply every observer's update sequentially in id order.

    This is the ideal centralized tracker.
    """
    x, P = predict(model, fs)
    for sl in stacked.offsets:
        x, P, _, _ = kf_update(x, P, stacked.H[sl], stacked.R[sl, sl], stacked.z[sl])
    return FilterState(x_hat=x, P=P, t=fs.t + 1)


def uncoded_worker_update(
    model: ProcessModel,
    fs_prev: FilterState,
    subset: list[tuple[Observer, np.ndarray]],
) -> FilterState:
    """update_all restricted to a worker's assigned (observer, observation) pairs."""
    x, P = predict(model, fs_prev)
    for obs, z_o in subset:
        x, P, _, _ = update_one(x, P, obs, z_o)
    return FilterState(x_hat=x, P=P, t=fs_prev.t + 1)


def average_estimates(states: list[FilterState]) -> FilterState:
    """Elementwise mean of estimates and covariances (uncoded-scheme fusion)."""
    if not states:
        raise ValueError("average_estimates needs a nonempty list")
    t = states[0].t
    if any(s.t != t for s in states):
        raise ValueError("estimates are not at the same time step")
    x = np.mean([s.x_hat for s in states], axis=0)
    P = np.mean([s.P for s in states], axis=0)
    return FilterState(x_hat=x, P=P, t=t)
