"""Generator-matrix designs for the two coding layers and their worker assignments.

The observation layer encodes the stacked observation z into C z, split into
blocks C^(i) z.  The estimate layer represents each partial state estimate as
a codeword symbol B^(j) x_hat.  Each estimate j consumes the observation
blocks listed in estimate_observations[j], through the reduced observation
matrix A[(i, j)] satisfying A[(i, j)] B^(j) = C^(i) H.
"""
from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigurationError, ObservationModel, Observer

CONSISTENCY_TOL = 1e-9


@dataclass
class CodeDesign:
    C_blocks: list[np.ndarray]
    B_blocks: list[np.ndarray]
    A: dict[tuple[int, int], np.ndarray]
    worker_estimates: list[list[int]]
    estimate_observations: list[list[int]]
    N_K: int
    rate: float
    # Observation-noise covariance C^(i) R C^(i)' of each encoded block.
    obs_noise: list[np.ndarray] = field(default_factory=list)
    kind: str = "custom"

    @property
    def N_C(self) -> int:
        return len(self.C_blocks)

    @property
    def N_B(self) -> int:
        return len(self.B_blocks)

    @property
    def n_C(self) -> int:
        return sum(C.shape[0] for C in self.C_blocks)

    @property
    def n_B(self) -> int:
        return sum(B.shape[0] for B in self.B_blocks)

    @property
    def d(self) -> int:
        return self.B_blocks[0].shape[1]

    @property
    def h(self) -> int:
        return self.C_blocks[0].shape[1]

    @property
    def n_workers(self) -> int:
        return len(self.worker_estimates)

    @property
    def all_scalar(self) -> bool:
        """True when every estimate is one-dimensional with a single scalar observation."""
        return (
            all(B.shape[0] == 1 for B in self.B_blocks)
            and all(C.shape[0] == 1 for C in self.C_blocks)
            and all(len(obs) == 1 for obs in self.estimate_observations)
        )

    def B_stack(self) -> np.ndarray:
        return np.vstack(self.B_blocks)

    def C_stack(self) -> np.ndarray:
        return np.vstack(self.C_blocks)

    @functools.cached_property
    def obs_offsets(self) -> list[slice]:
        """Row range of each observation block within the concatenated C z."""
        offsets, start = [], 0
        for C in self.C_blocks:
            offsets.append(slice(start, start + C.shape[0]))
            start += C.shape[0]
        return offsets


def design_replication(N_w: int, observers: list[Observer], d: int) -> CodeDesign:
    """Every worker runs the full tracking task on the raw observations.

    B^(j) = I_d for each of the N_w estimates; the observation blocks are the
    identity-coded per-observer slices, duplicated once per worker, so each
    estimate sees exactly the raw observation set.  Code rate h/n_C = 1/N_w.
    """
    if N_w < 1:
        raise ConfigurationError(f"N_w must be >= 1, got {N_w}")
    obs_model = ObservationModel(observers)
    if obs_model.d != d:
        raise ConfigurationError(f"observers have d={obs_model.d}, expected {d}")
    h = obs_model.h
    eye_h = np.eye(h)
    B_blocks = [np.eye(d) for _ in range(N_w)]
    C_blocks: list[np.ndarray] = []
    A: dict[tuple[int, int], np.ndarray] = {}
    obs_noise: list[np.ndarray] = []
    estimate_observations: list[list[int]] = []
    i = 0
    for j in range(N_w):
        assigned = []
        for o, sl in zip(obs_model.observers, obs_model.offsets):
            C_blocks.append(eye_h[sl])
            A[(i, j)] = o.H
            obs_noise.append(o.R)
            assigned.append(i)
            i += 1
        estimate_observations.append(assigned)
    return CodeDesign(
        C_blocks=C_blocks,
        B_blocks=B_blocks,
        A=A,
        worker_estimates=[[j] for j in range(N_w)],
        estimate_observations=estimate_observations,
        N_K=0,
        rate=1.0 / N_w,
        obs_noise=obs_noise,
        kind="replication",
    )


def design_random_mds(
    N_w: int,
    observers: list[Observer],
    d: int,
    rate: float,
    rng: np.random.Generator,
) -> CodeDesign:
    """Random MDS design: n_C scalar coded observations, one per scalar estimate.

    C has i.i.d. standard-normal entries (rows with numerically zero B^(j) =
    C^(i) H are redrawn); estimates are dealt round-robin over the workers.
    """
    if N_w < 1:
        raise ConfigurationError(f"N_w must be >= 1, got {N_w}")
    if not 0.0 < rate <= 1.0:
        raise ConfigurationError(f"rate must be in (0, 1], got {rate}")
    obs_model = ObservationModel(observers)
    if obs_model.d != d:
        raise ConfigurationError(f"observers have d={obs_model.d}, expected {d}")
    h, H, R = obs_model.h, obs_model.H, obs_model.R
    n_C = int(round(h / rate))
    if n_C < d:
        raise ConfigurationError(f"n_C={n_C} < d={d}: code cannot cover the state")

    C = rng.standard_normal((n_C, h))
    B = C @ H
    for i in range(n_C):
        while np.linalg.norm(B[i]) < 1e-12:
            C[i] = rng.standard_normal(h)
            B[i] = C[i] @ H
    noise = np.einsum("ij,jk,ik->i", C, R, C)

    N_o = len(obs_model.observers)
    # ceil((N_o / (h / n_C)) / N_w) in exact integer arithmetic
    N_K = -(-(N_o * n_C) // (h * N_w))
    return CodeDesign(
        C_blocks=[C[i : i + 1] for i in range(n_C)],
        B_blocks=[B[i : i + 1] for i in range(n_C)],
        A={(i, i): np.eye(1) for i in range(n_C)},
        worker_estimates=[list(range(w, n_C, N_w)) for w in range(N_w)],
        estimate_observations=[[i] for i in range(n_C)],
        N_K=int(N_K),
        rate=h / n_C,
        obs_noise=[noise[i].reshape(1, 1) for i in range(n_C)],
        kind="mds",
    )


def verify_design(cd: CodeDesign, H: np.ndarray) -> bool:
    """Check all structural invariants of a CodeDesign against the stacked H."""
    H = np.asarray(H)
    if cd.N_B > cd.N_C:
        return False
    if any(C.shape[1] != cd.h for C in cd.C_blocks):
        return False
    if any(B.shape[1] != cd.d for B in cd.B_blocks):
        return False
    # worker estimate sets partition 0..N_B-1
    seen = [j for w in cd.worker_estimates for j in w]
    if sorted(seen) != list(range(cd.N_B)):
        return False
    # per-estimate observation sets partition 0..N_C-1
    seen = [i for obs in cd.estimate_observations for i in obs]
    if sorted(seen) != list(range(cd.N_C)):
        return False
    if len(cd.estimate_observations) != cd.N_B:
        return False
    for j, obs_ids in enumerate(cd.estimate_observations):
        for i in obs_ids:
            A_ij = cd.A.get((i, j))
            if A_ij is None:
                return False
            if np.max(np.abs(A_ij @ cd.B_blocks[j] - cd.C_blocks[i] @ H)) > CONSISTENCY_TOL:
                return False
    return True


def estimate_ops(cd: CodeDesign, h_o: int, N_w: int) -> int:
    """Dominant operation count: gain inversions across workers for one step.

    N_K * N_w * h_o^3 for the uncoded gains, plus the cube of each coded
    observation's dimension over every (worker, estimate, observation).
    """
    coded = sum(
        cd.C_blocks[i].shape[0] ** 3
        for w in cd.worker_estimates
        for j in w
        for i in cd.estimate_observations[j]
    )
    return cd.N_K * N_w * h_o**3 + coded


def design_metadata(cd: CodeDesign, seed: int | None = None) -> str:
    """Deterministic JSON description of a design, for reproducibility records."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(cd.C_stack()).tobytes())
    digest.update(np.ascontiguousarray(cd.B_stack()).tobytes())
    meta = {
        "kind": cd.kind,
        "n_workers": cd.n_workers,
        "rate": cd.rate,
        "n_C": cd.n_C,
        "n_B": cd.n_B,
        "N_C": cd.N_C,
        "N_B": cd.N_B,
        "N_K": cd.N_K,
        "seed": seed,
        "generator_sha256": digest.hexdigest(),
    }
    return json.dumps(meta, sort_keys=True)
