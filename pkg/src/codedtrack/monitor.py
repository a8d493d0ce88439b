"""End-of-step decoding at the monitor: batch assembly, whitening, solve, P heuristic."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coding import CodeDesign
from .kalman import GainRecord, kf_update
from .model import FilterError, ObservationModel, ProcessModel, symmetrize
from .numerics import (
    WHITEN_REL_TOL,
    build_whitener,
    eigh_psd,
    lsmr_solve,
    psd_sqrt,
    retained_count,
)
from .worker import CodedEstimate, DesignRuntime, WorkerOutput

logger = logging.getLogger(__name__)


@dataclass
class MonitorState:
    """Monitor-side belief: current estimate, covariance heuristic, gain cache."""

    x_hat: np.ndarray
    P: np.ndarray
    gain_cache: dict[int, GainRecord] = field(default_factory=dict)
    r_full: int = -1
    t: int = 0


@dataclass
class DecodeBatch:
    """Received coded estimates stacked for decoding.

    P_y is the dense covariance of y_stack when the batch was assembled
    through the literal construction; the vectorized scalar path keeps only
    the whitened system (same whitener, computed through the factor).
    full_state_rank reports whether the whitened system pins down every state
    direction (numerical column rank d).
    """

    received: list[CodedEstimate]
    B_stack: np.ndarray
    y_stack: np.ndarray
    rank: int
    P_y: np.ndarray | None = None
    MB: np.ndarray | None = None
    My: np.ndarray | None = None
    full_state_rank: bool = False


def _has_full_state_rank(MB: np.ndarray, d: int) -> bool:
    if MB.shape[0] < d:
        return False
    s = np.linalg.svd(MB, compute_uv=False)
    return bool(s[-1] > 1e-8 * s[0])


def error_maps(
    cd: CodeDesign,
    model: ProcessModel,
    j: int,
    gains: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine maps (G, W, V) sending (e_{t-1}, q_t, r_t) to estimate j's error.

    Initialized at the prediction (G = B F, W = B, V = 0) and contracted by
    (I - K A) per applied update, accumulating K C into the noise map.
    """
    B = cd.B_blocks[j]
    G = B @ model.F
    W = B.copy()
    V = np.zeros((B.shape[0], cd.h))
    eye = np.eye(B.shape[0])
    for K, A, C in gains:
        IKA = eye - K @ A
        G = IKA @ G
        W = IKA @ W
        V = IKA @ V + K @ C
    return G, W, V


def assemble_covariance(
    cd: CodeDesign,
    model: ProcessModel,
    obs_model: ObservationModel,
    P_prev: np.ndarray,
    batch_gains: list[tuple[int, list[tuple[np.ndarray, np.ndarray, np.ndarray]]]],
) -> np.ndarray:
    """Joint covariance of the stacked received estimates' errors.

    batch_gains lists, per received estimate j in batch order, the ordered
    (K, A, C) triples actually applied.  Block (j, j') is
    G_j P_prev G_j'' + W_j Q W_j'' + V_j R V_j''; all three noise sources are
    shared across estimates, so cross blocks keep every term.
    """
    maps = [error_maps(cd, model, j, gains) for j, gains in batch_gains]
    G = np.vstack([m[0] for m in maps])
    W = np.vstack([m[1] for m in maps])
    V = np.vstack([m[2] for m in maps])
    P_y = G @ P_prev @ G.T + W @ model.Q @ W.T + V @ obs_model.R @ V.T
    return symmetrize(P_y)


def _gain_triples(cd: CodeDesign, est: CodedEstimate):
    return [(K, cd.A[(i, est.j)], cd.C_blocks[i]) for i, K, _ in est.gains]


def build_decode_batch(
    cd: CodeDesign,
    model: ProcessModel,
    obs_model: ObservationModel,
    P_prev: np.ndarray,
    received: list[CodedEstimate],
    rt: DesignRuntime | None = None,
    rel_tol: float = WHITEN_REL_TOL,
) -> DecodeBatch:
    """Stack received estimates (ascending index) and whiten their covariance."""
    received = sorted(received, key=lambda e: e.j)
    if not received:
        return DecodeBatch(
            received=[], B_stack=np.zeros((0, cd.d)), y_stack=np.zeros(0), rank=0
        )
    if rt is not None and cd.all_scalar:
        return _scalar_decode_batch(cd, model, P_prev, received, rt, rel_tol)
    B_stack = np.vstack([cd.B_blocks[e.j] for e in received])
    y_stack = np.concatenate([e.x_hat_j for e in received])
    batch_gains = [(e.j, _gain_triples(cd, e)) for e in received]
    P_y = assemble_covariance(cd, model, obs_model, P_prev, batch_gains)
    wh = build_whitener(P_y, rel_tol)
    MB = wh.M @ B_stack
    return DecodeBatch(
        received=received,
        B_stack=B_stack,
        y_stack=y_stack,
        rank=wh.retained,
        P_y=P_y,
        MB=MB,
        My=wh.M @ y_stack,
        full_state_rank=_has_full_state_rank(MB, cd.d),
    )


def _scalar_decode_batch(
    cd: CodeDesign,
    model: ProcessModel,
    P_prev: np.ndarray,
    received: list[CodedEstimate],
    rt: DesignRuntime,
    rel_tol: float,
) -> DecodeBatch:
    """Whitened system for all-scalar designs through the error-map factor.

    P_y = Phi Phi' with Phi = [G P^(1/2) | W Q^(1/2) | V R^(1/2)]; the
    eigendecomposition runs on whichever side of the factor is smaller, which
    yields the same PCA whitener as decomposing P_y itself.
    """
    j_idx = np.fromiter((e.j for e in received), dtype=int, count=len(received))
    y = np.fromiter((e.x_hat_j[0] for e in received), dtype=float, count=len(received))
    K = np.fromiter(
        ((e.gains[0][1][0, 0] if e.gains else 0.0) for e in received),
        dtype=float,
        count=len(received),
    )
    a = rt.a[j_idx]
    obs_idx = rt.obs_idx[j_idx]
    one_minus = 1.0 - K * a
    P_half = psd_sqrt(P_prev)
    Phi = np.hstack(
        [
            one_minus[:, None] * (rt.BF[j_idx] @ P_half),
            one_minus[:, None] * rt.BQ_half[j_idx],
            K[:, None] * rt.Psi[obs_idx],
        ]
    )
    B_stack = rt.B[j_idx]
    k, m = Phi.shape
    if k <= m:
        P_y = Phi @ Phi.T
        w, V = eigh_psd(symmetrize(P_y))
        r = retained_count(w, rel_tol)
        M = (V[:, :r] / np.sqrt(w[:r])).T
        MB, My = M @ B_stack, M @ y
    else:
        P_y = None
        w, V = eigh_psd(Phi.T @ Phi)
        r = retained_count(w, rel_tol)
        Vr = V[:, :r]
        MB = (Vr.T @ (Phi.T @ B_stack)) / w[:r, None]
        My = (Vr.T @ (Phi.T @ y)) / w[:r]
    return DecodeBatch(
        received=received, B_stack=B_stack, y_stack=y, rank=r, P_y=P_y, MB=MB, My=My,
        full_state_rank=_has_full_state_rank(MB, cd.d),
    )


def decode(
    ms: MonitorState,
    model: ProcessModel,
    cd: CodeDesign,
    batch: DecodeBatch,
    x_tilde: np.ndarray,
) -> tuple[np.ndarray, bool]:
    """Overall estimate from the received batch; prediction when nothing arrived.

    Replication batches are recovered directly from the lowest-index replica
    (identity generator blocks make any replica the estimate itself).  Other
    designs solve the whitened least squares with LSMR started at the
    prediction; decoded reports whether the monitor had enough information to
    recover the full state, i.e. the whitened system has column rank d.
    """
    if not batch.received:
        return x_tilde, False
    if cd.kind == "replication":
        # a single replica is the full estimate
        return batch.received[0].x_hat_j.copy(), True
    x, info = lsmr_solve(batch.MB, batch.My, x0=x_tilde)
    if not info.converged:
        logger.warning("decode: LSMR hit max_iter at t=%d (kept best iterate)", ms.t + 1)
    return x, batch.full_state_rank


def update_P_heuristic(
    ms: MonitorState,
    model: ProcessModel,
    obs_model: ObservationModel,
    decoded: bool,
) -> np.ndarray:
    """Monitor covariance update from cached uncoded gains.

    Returns the prediction covariance unless the batch decoded at full rank
    and every observer has a cached gain, in which case a full sequential
    update with the most recent gains is applied.
    """
    P_tilde = symmetrize(model.F @ ms.P @ model.F.T + model.Q)
    if not decoded:
        return P_tilde
    n_obs = len(obs_model.observers)
    if any(o not in ms.gain_cache for o in range(n_obs)):
        return P_tilde
    P = P_tilde
    eye = np.eye(model.d)
    for o in range(n_obs):
        K = ms.gain_cache[o].K
        P = symmetrize((eye - K @ obs_model.observers[o].H) @ P)
    # Cached gains matched to an older covariance can overshoot and leave the
    # PSD cone (mostly in transients); clip so downstream factorizations hold.
    w, V = eigh_psd(P)
    if w[-1] < 0.0:
        logger.debug("update_P_heuristic: clipped negative eigenvalues at t=%d", ms.t + 1)
        P = symmetrize((V * np.clip(w, 0.0, None)) @ V.T)
    return P


def compute_r_full(
    cd: CodeDesign,
    model: ProcessModel,
    obs_model: ObservationModel,
    steady_P: np.ndarray,
    rt: DesignRuntime | None = None,
    rel_tol: float = WHITEN_REL_TOL,
) -> int:
    """Rank of the batch covariance when every estimate is received.

    Gains are data independent, so they are regenerated from steady_P by the
    same covariance recursion the workers run.
    """
    if rt is not None and cd.all_scalar:
        P_tilde = np.einsum("ij,ij->i", rt.BF @ steady_P, rt.BF) + rt.bQb
        S = rt.noise[rt.obs_idx] + rt.a * P_tilde * rt.a
        ok = S > 0
        K = np.where(ok, rt.a * P_tilde / np.where(ok, S, 1.0), 0.0)
        one_minus = 1.0 - K * rt.a
        Phi = np.hstack(
            [
                one_minus[:, None] * (rt.BF @ psd_sqrt(steady_P)),
                one_minus[:, None] * rt.BQ_half,
                K[:, None] * rt.Psi[rt.obs_idx],
            ]
        )
        gram = Phi.T @ Phi if Phi.shape[0] > Phi.shape[1] else Phi @ Phi.T
        w, _ = eigh_psd(symmetrize(gram))
        return retained_count(w, rel_tol)
    batch_gains = []
    for j in range(cd.N_B):
        x_j = np.zeros(cd.B_blocks[j].shape[0])
        P_j = (
            cd.B_blocks[j] @ model.F @ steady_P @ (cd.B_blocks[j] @ model.F).T
            + cd.B_blocks[j] @ model.Q @ cd.B_blocks[j].T
        )
        triples = []
        for i in sorted(cd.estimate_observations[j]):
            A = cd.A[(i, j)]
            try:
                x_j, P_j, K, _ = kf_update(
                    x_j, P_j, A, cd.obs_noise[i], np.zeros(A.shape[0])
                )
            except FilterError:
                continue
            triples.append((K, A, cd.C_blocks[i]))
        batch_gains.append((j, triples))
    P_y = assemble_covariance(cd, model, obs_model, steady_P, batch_gains)
    w, _ = eigh_psd(P_y)
    return retained_count(w, rel_tol)


def monitor_step(
    ms: MonitorState,
    model: ProcessModel,
    obs_model: ObservationModel,
    cd: CodeDesign,
    outputs: list[WorkerOutput],
    rt: DesignRuntime | None = None,
    rel_tol: float = WHITEN_REL_TOL,
    warming: bool = False,
) -> tuple[bool, int, int]:
    """One end-of-step monitor update; mutates ms and returns (decoded, rank, |U_t|).

    Gains received this step enter the cache before the covariance heuristic
    runs.  With ``warming`` set (full-availability warm-up before r_full is
    frozen) the batch is complete by construction and treated as decoded.
    """
    x_tilde = model.F @ ms.x_hat
    for out in sorted(outputs, key=lambda o: o.worker_id):
        for g in out.uncoded_gains:
            ms.gain_cache[g.observer_id] = g
    received = [e for out in outputs for e in out.estimates]
    n_received = len(received)
    if n_received == 0:
        ms.x_hat = x_tilde
        ms.P = symmetrize(model.F @ ms.P @ model.F.T + model.Q)
        ms.t += 1
        return False, 0, 0

    if cd.kind == "replication":
        received.sort(key=lambda e: e.j)
        # Replica errors are identical, so any nonempty batch already carries
        # the full-availability rank.
        rank = ms.r_full if not warming else -1
        decoded = True
        est = received[0]
        if est.P_full is not None:
            new_P = est.P_full.copy()
        else:
            new_P = update_P_heuristic(ms, model, obs_model, decoded)
        ms.x_hat = est.x_hat_j.copy()
        ms.P = new_P
        ms.t += 1
        return decoded, rank, n_received

    batch = build_decode_batch(cd, model, obs_model, ms.P, received, rt, rel_tol)
    x_hat, decoded = decode(ms, model, cd, batch, x_tilde)
    if warming:
        decoded = True
    new_P = update_P_heuristic(ms, model, obs_model, decoded)
    ms.x_hat = x_hat
    ms.P = new_P
    ms.t += 1
    return decoded, batch.rank, n_received
