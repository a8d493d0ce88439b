"""The coded Kalman filter one worker runs in one time step."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coding import CodeDesign
from .kalman import GainRecord, kf_update
from .model import ConfigurationError, FilterError, ObservationModel, ProcessModel, symmetrize

logger = logging.getLogger(__name__)


@dataclass
class CodedEstimate:
    """One codeword symbol B^(j) x_hat with the gains used to compute it.

    gains holds (i, K, S) tuples in the update order actually applied; updates
    skipped for a singular innovation covariance are omitted.  P_full carries
    the worker's final error covariance only for identity-coded (replication)
    estimates, where the monitor can adopt it directly.
    """

    j: int
    x_hat_j: np.ndarray
    gains: list[tuple[int, np.ndarray, np.ndarray]]
    t: int
    P_full: np.ndarray | None = None


@dataclass
class WorkerOutput:
    worker_id: int
    estimates: list[CodedEstimate]
    uncoded_gains: list[GainRecord]
    t: int


class CodedObservations:
    """Map i -> C^(i) z for one step, backed by the concatenated coded vector."""

    def __init__(self, values: np.ndarray, offsets: list[slice]):
        self.values = values
        self.offsets = offsets

    def __getitem__(self, i: int) -> np.ndarray:
        return self.values[self.offsets[i]]

    def __len__(self) -> int:
        return len(self.offsets)


def coded_predict(
    cd: CodeDesign,
    model: ProcessModel,
    j: int,
    x_hat_prev: np.ndarray,
    P_prev: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted coded estimate (B F) x_hat and covariance (BF) P (BF)' + B Q B'."""
    B = cd.B_blocks[j]
    BF = B @ model.F
    x_tilde = BF @ x_hat_prev
    P_tilde = BF @ P_prev @ BF.T + B @ model.Q @ B.T
    return x_tilde, P_tilde


def coded_update_one(
    x_tilde_j: np.ndarray,
    P_tilde_j: np.ndarray,
    A_ij: np.ndarray,
    cz_i: np.ndarray,
    noise_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Measurement update of a coded estimate with one coded observation.

    The coded observation C^(i) z acts as an observation of B^(j) x with
    observation matrix A_ij and noise covariance C^(i) R C^(i)'.
    """
    return kf_update(x_tilde_j, P_tilde_j, A_ij, noise_cov, cz_i)


def sequential_uncoded_gains(
    model: ProcessModel, obs_model: ObservationModel, P_prev: np.ndarray
) -> list[np.ndarray]:
    """Kalman gains of the full uncoded update procedure, one per observer.

    Gain o is taken from the sequential pass in ascending id order, so a cache
    holding these reproduces the centralized posterior covariance exactly.
    The gains depend only on P_prev, never on observations.
    """
    P = symmetrize(model.F @ P_prev @ model.F.T + model.Q)
    x = np.zeros(model.d)
    gains = []
    for obs in obs_model.observers:
        x, P, K, _ = kf_update(x, P, obs.H, obs.R, np.zeros(obs.h))
        gains.append(K)
    return gains


def _sample_uncoded_gains(
    model: ProcessModel,
    obs_model: ObservationModel,
    P_prev: np.ndarray,
    n_gains: int,
    rng: np.random.Generator,
    t: int,
    gain_table: list[np.ndarray] | None,
) -> list[GainRecord]:
    if n_gains == 0:
        return []
    if gain_table is None:
        gain_table = sequential_uncoded_gains(model, obs_model, P_prev)
    ids = rng.choice(len(obs_model.observers), size=n_gains, replace=False)
    return [GainRecord(observer_id=int(o), K=gain_table[int(o)], t=t) for o in ids]


def _scalar_worker_estimates(
    cd: CodeDesign,
    model: ProcessModel,
    w: int,
    x_hat_prev: np.ndarray,
    P_prev: np.ndarray,
    coded_obs: CodedObservations,
    t: int,
    rt: "DesignRuntime | None",
) -> list[CodedEstimate]:
    """Vectorized scalar filter over all of worker w's one-dimensional estimates."""
    idx = np.asarray(cd.worker_estimates[w], dtype=int)
    if rt is not None:
        obs_ids = rt.obs_idx[idx]
        BF, bQb = rt.BF[idx], rt.bQb[idx]
        noise, a = rt.noise[obs_ids], rt.a[idx]
    else:
        obs_ids = np.array([cd.estimate_observations[j][0] for j in idx])
        B = np.vstack([cd.B_blocks[j] for j in idx])
        BF = B @ model.F
        bQb = np.einsum("ij,jk,ik->i", B, model.Q, B)
        noise = np.array([cd.obs_noise[i][0, 0] for i in obs_ids])
        a = np.array([cd.A[(i, j)][0, 0] for i, j in zip(obs_ids, idx)])
    x_tilde = BF @ x_hat_prev
    P_tilde = np.einsum("ij,ij->i", BF @ P_prev, BF) + bQb
    z = np.array([coded_obs[i][0] for i in obs_ids]) if rt is None else coded_obs.values[obs_ids]
    S = noise + a * P_tilde * a
    ok = S > 0
    K = np.where(ok, a * P_tilde / np.where(ok, S, 1.0), 0.0)
    x_hat = x_tilde + K * (z - a * x_tilde)
    if not ok.all():
        logger.warning("worker %d skipped %d singular coded updates", w, int((~ok).sum()))
    estimates = []
    for m, j in enumerate(idx):
        gains = (
            [(int(obs_ids[m]), K[m].reshape(1, 1), S[m].reshape(1, 1))] if ok[m] else []
        )
        estimates.append(
            CodedEstimate(j=int(j), x_hat_j=x_hat[m : m + 1].copy(), gains=gains, t=t)
        )
    return estimates


def worker_step(
    cd: CodeDesign,
    model: ProcessModel,
    obs_model: ObservationModel,
    w: int,
    x_hat_prev: np.ndarray,
    P_prev: np.ndarray,
    coded_obs: CodedObservations,
    rng: np.random.Generator,
    t: int = 0,
    gain_table: list[np.ndarray] | None = None,
    rt: "DesignRuntime | None" = None,
) -> WorkerOutput:
    """All coded estimates assigned to worker w for one step, plus sampled gains.

    Each estimate j in the worker's set is predicted and then updated with its
    coded observations in ascending index order; a singular innovation
    covariance drops that observation and is recorded as a skip.  For N_K
    observers drawn without replacement, the worker also reports the
    corresponding gains of the full uncoded update procedure (all gains follow
    from P_prev alone).  ``gain_table`` and ``rt`` are optional precomputations
    carrying the same values the function would derive itself.
    """
    if len(coded_obs) < cd.N_C:
        raise ConfigurationError(
            f"coded observations cover {len(coded_obs)} blocks, design has {cd.N_C}"
        )
    if cd.all_scalar and cd.kind != "replication":
        estimates = _scalar_worker_estimates(
            cd, model, w, x_hat_prev, P_prev, coded_obs, t, rt
        )
    else:
        estimates = []
        for j in cd.worker_estimates[w]:
            x_j, P_j = coded_predict(cd, model, j, x_hat_prev, P_prev)
            gains: list[tuple[int, np.ndarray, np.ndarray]] = []
            for i in sorted(cd.estimate_observations[j]):
                try:
                    x_j, P_j, K, S = coded_update_one(
                        x_j, P_j, cd.A[(i, j)], coded_obs[i], cd.obs_noise[i]
                    )
                except FilterError:
                    logger.warning(
                        "worker %d estimate %d: singular S for observation %d, skipped",
                        w, j, i,
                    )
                    continue
                gains.append((i, K, S))
            P_full = P_j if cd.kind == "replication" else None
            estimates.append(
                CodedEstimate(j=j, x_hat_j=x_j, gains=gains, t=t, P_full=P_full)
            )
    uncoded = _sample_uncoded_gains(model, obs_model, P_prev, cd.N_K, rng, t, gain_table)
    return WorkerOutput(worker_id=w, estimates=estimates, uncoded_gains=uncoded, t=t)


@dataclass
class DesignRuntime:
    """Per-design precomputation shared across steps of one simulation.

    Only populated for all-scalar designs, where the stacked forms admit
    vectorized worker updates and covariance assembly.
    """

    BF: np.ndarray        # stacked B @ F, one row per estimate
    bQb: np.ndarray       # diag(B Q B')
    noise: np.ndarray     # diag(C R C'), indexed by observation block
    a: np.ndarray         # scalar A^(i,j) per estimate j
    obs_idx: np.ndarray   # observation block consumed by each estimate
    B: np.ndarray         # stacked B
    C: np.ndarray         # stacked C
    BQ_half: np.ndarray   # B @ Q^(1/2), thin
    Psi: np.ndarray       # C @ R^(1/2), thin


def build_design_runtime(
    cd: CodeDesign, model: ProcessModel, obs_model: ObservationModel
) -> DesignRuntime | None:
    if not cd.all_scalar:
        return None
    from .numerics import psd_sqrt

    B = cd.B_stack()
    C = cd.C_stack()
    obs_idx = np.array([obs[0] for obs in cd.estimate_observations])
    a = np.array([cd.A[(obs[0], j)][0, 0] for j, obs in enumerate(cd.estimate_observations)])
    return DesignRuntime(
        BF=B @ model.F,
        bQb=np.einsum("ij,jk,ik->i", B, model.Q, B),
        noise=np.concatenate([n.ravel() for n in cd.obs_noise]),
        a=a,
        obs_idx=obs_idx,
        B=B,
        C=C,
        BQ_half=B @ psd_sqrt(model.Q),
        Psi=C @ psd_sqrt(obs_model.R),
    )
