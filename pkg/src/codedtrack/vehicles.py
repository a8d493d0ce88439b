"""Multi-vehicle cooperative localization scenario.

Each vehicle's state is [x position, y position, x speed, y speed].  A vehicle
observes its own absolute position and speed (GNSS-grade) and the relative
position/speed of its s ring neighbors (V2V-grade).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConfigurationError, ObservationModel, Observer, ProcessModel

VEHICLE_DIM = 4


@dataclass(frozen=True)
class SigmaSet:
    sigma_a: float = 0.3
    sigma_gnss: float = 2.0
    sigma_v2v: float = 0.5
    sigma_speed: float = 10.0


def build_fv_qv(dt: float, sigma_a: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-vehicle constant-velocity transition F_v and noise covariance Q_v.

    Q_v = V diag(sigma_a, sigma_a) V' with V the acceleration-to-state map;
    sigma_a enters unsquared, matching the scenario definition as printed.
    """
    if dt < 0:
        raise ConfigurationError(f"dt must be nonnegative, got {dt}")
    F_v = np.array(
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    V = np.array(
        [
            [dt**2 / 2.0, 0.0],
            [0.0, dt**2 / 2.0],
            [dt, 0.0],
            [0.0, dt],
        ]
    )
    Q_v = V @ np.diag([sigma_a, sigma_a]) @ V.T
    return F_v, Q_v


def build_topology(n_vehicles: int, s: int) -> list[list[int]]:
    """Ring observation lists: vehicle i observes (i+1) mod N .. (i+s) mod N."""
    if not 1 <= s < n_vehicles:
        raise ConfigurationError(f"need 1 <= s < n_vehicles, got s={s}, n={n_vehicles}")
    return [[(i + k) % n_vehicles for k in range(1, s + 1)] for i in range(n_vehicles)]


def build_observer(
    i: int, topology: list[list[int]], n_vehicles: int, sigmas: SigmaSet
) -> Observer:
    """Observer for vehicle i: one absolute row plus one relative row per neighbor.

    H = U kron I_4 with U's first row e_i and each relative row e_k - e_i;
    R = blockdiag(R_GNSS, I_s kron R_Rel), all sigmas squared on the diagonal.
    """
    targets = topology[i]
    U = np.zeros((len(targets) + 1, n_vehicles))
    U[0, i] = 1.0
    for row, k in enumerate(targets, start=1):
        U[row, i] = -1.0
        U[row, k] = 1.0
    H = np.kron(U, np.eye(VEHICLE_DIM))
    r_gnss = [sigmas.sigma_gnss**2] * 2 + [sigmas.sigma_speed**2] * 2
    r_rel = [sigmas.sigma_v2v**2] * 2 + [sigmas.sigma_speed**2] * 2
    R = np.diag(r_gnss + r_rel * len(targets))
    return Observer(id=i, H=H, R=R)


@dataclass
class VehicleScenario:
    n_vehicles: int
    s: int
    dt: float
    sigmas: SigmaSet
    model: ProcessModel
    observers: list[Observer]
    obs_model: ObservationModel

    @property
    def d(self) -> int:
        return VEHICLE_DIM * self.n_vehicles

    @property
    def position_indices(self) -> np.ndarray:
        """State indices holding positions (entries 0 and 1 of each vehicle block)."""
        base = VEHICLE_DIM * np.arange(self.n_vehicles)
        return np.sort(np.concatenate([base, base + 1]))


def build_scenario(
    n_vehicles: int, s: int, dt: float, sigmas: SigmaSet | None = None
) -> VehicleScenario:
    sigmas = sigmas or SigmaSet()
    F_v, Q_v = build_fv_qv(dt, sigmas.sigma_a)
    eye = np.eye(n_vehicles)
    model = ProcessModel(F=np.kron(eye, F_v), Q=np.kron(eye, Q_v))
    topology = build_topology(n_vehicles, s)
    observers = [build_observer(i, topology, n_vehicles, sigmas) for i in range(n_vehicles)]
    return VehicleScenario(
        n_vehicles=n_vehicles,
        s=s,
        dt=dt,
        sigmas=sigmas,
        model=model,
        observers=observers,
        obs_model=ObservationModel(observers),
    )


def draw_initial_state(n_vehicles: int, rng: np.random.Generator) -> np.ndarray:
    """Initial truth: positions uniform in a 100 m box, speeds uniform in [-10, 10]."""
    x0 = np.empty(VEHICLE_DIM * n_vehicles)
    for v in range(n_vehicles):
        x0[4 * v : 4 * v + 2] = rng.uniform(0.0, 100.0, size=2)
        x0[4 * v + 2 : 4 * v + 4] = rng.uniform(-10.0, 10.0, size=2)
    return x0
