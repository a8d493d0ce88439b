"""Experiment orchestration: per-step loop, baselines, metrics, aggregation, I/O."""
from __future__ import annotations

import dataclasses
import importlib.metadata
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coding import CodeDesign, design_metadata, design_random_mds, design_replication
from .kalman import FilterState, average_estimates, predict, uncoded_worker_update, update_all
from .model import (
    ConfigurationError,
    ObservationModel,
    ProcessModel,
    StackedObservation,
    simulate_arrays,
    symmetrize,
)
from .monitor import MonitorState, compute_r_full, monitor_step
from .straggler import AvailabilityState, step_available
from .vehicles import SigmaSet, VehicleScenario, build_scenario, draw_initial_state
from .worker import (
    CodedObservations,
    build_design_runtime,
    sequential_uncoded_gains,
    worker_step,
)

logger = logging.getLogger(__name__)

SCHEMES = ("replication", "mds", "uncoded", "ideal")
WARMUP_STEPS = 50
MONITOR_INIT_STD = 2.0   # x_hat_0 = x_0 + N(0, 4 I)
MONITOR_INIT_VAR = 10.0  # P_0 = 10 I


@dataclass(frozen=True)
class RunConfig:
    scheme: str
    n_vehicles: int = 10
    s: int = 5
    n_workers: int = 1
    rate: float = 1.0
    dt: float = 0.1
    beta: float = 10.0
    t_steps: int = 10000
    n_sims: int = 10
    seed: int = 0
    sigma_a: float = 0.3
    sigma_gnss: float = 2.0
    sigma_v2v: float = 0.5
    sigma_speed: float = 10.0
    straggle: bool = True  # False forces every worker available (test hook)

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_vehicles < 2:
            raise ConfigurationError("n_vehicles must be >= 2")
        if not 1 <= self.s < self.n_vehicles:
            raise ConfigurationError("need 1 <= s < n_vehicles")
        if self.dt <= 0 or self.beta <= 0:
            raise ConfigurationError("dt and beta must be positive")
        if self.t_steps < 1 or self.n_sims < 1 or self.n_workers < 1:
            raise ConfigurationError("t_steps, n_sims and n_workers must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be nonnegative")
        if self.scheme == "replication":
            inv = 1.0 / self.rate
            if abs(inv - round(inv)) > 1e-9 or round(inv) != self.n_workers:
                raise ConfigurationError(
                    "replication requires n_workers == 1/rate with 1/rate integer; "
                    f"got rate={self.rate}, n_workers={self.n_workers}"
                )
        if self.scheme == "mds":
            if not 0.0 < self.rate <= 1.0:
                raise ConfigurationError(f"mds rate must be in (0, 1], got {self.rate}")
            h = 4 * self.n_vehicles * (self.s + 1)
            if round(h / self.rate) < 4 * self.n_vehicles:
                raise ConfigurationError("mds code length n_C < state dimension d")

    @property
    def sigmas(self) -> SigmaSet:
        return SigmaSet(self.sigma_a, self.sigma_gnss, self.sigma_v2v, self.sigma_speed)


@dataclass
class StepRecord:
    sim_id: int
    t: int
    rmse: float
    decoded: bool
    rank: int
    n_received: int


@dataclass
class SummaryRecord:
    config: RunConfig
    t0_mean: float
    rmse_p90: float
    rmse_mean: float
    availability: float


# --- deterministic stream derivation -------------------------------------------------

def design_seed_seq(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(0,))


def sim_streams(seed: int, sim_id: int) -> dict[str, np.random.Generator]:
    """Independent per-simulation streams, mixed from (seed, sim_id).

    Children in fixed order: trajectory, monitor init, straggler, worker draws,
    then warm-up trajectory / init / worker draws.
    """
    root = np.random.SeedSequence(entropy=seed, spawn_key=(1, sim_id))
    names = ("traj", "init", "straggler", "worker", "warm_traj", "warm_init", "warm_worker")
    return {n: np.random.default_rng(ss) for n, ss in zip(names, root.spawn(len(names)))}


def build_design(config: RunConfig, scenario: VehicleScenario) -> CodeDesign | None:
    if config.scheme == "replication":
        return design_replication(config.n_workers, scenario.observers, scenario.d)
    if config.scheme == "mds":
        rng = np.random.default_rng(design_seed_seq(config.seed))
        return design_random_mds(
            config.n_workers, scenario.observers, scenario.d, config.rate, rng
        )
    return None


# --- per-step pieces ------------------------------------------------------------------

def encode_observations(cd: CodeDesign, stacked: StackedObservation, rt=None) -> CodedObservations:
    """Encode a stacked observation into the per-block coded observations C^(i) z."""
    z = stacked.z
    if cd.kind == "replication":
        values = np.tile(z, cd.n_workers)
    elif rt is not None:
        values = rt.C @ z
    else:
        values = np.concatenate([C @ z for C in cd.C_blocks])
    return CodedObservations(values=values, offsets=cd.obs_offsets)


def position_rmse(x_hat: np.ndarray, x_true: np.ndarray, pos_idx: np.ndarray) -> float:
    e = x_hat[pos_idx] - x_true[pos_idx]
    return float(np.sqrt(np.mean(e * e)))


# --- engines --------------------------------------------------------------------------

class _CodedEngine:
    """Replication / MDS pipeline: encode, straggle, coded workers, monitor decode."""

    def __init__(self, config: RunConfig, scenario: VehicleScenario, sim_id: int):
        self.config = config
        self.scenario = scenario
        self.model = scenario.model
        self.obs_model = scenario.obs_model
        self.cd = build_design(config, scenario)
        self.rt = build_design_runtime(self.cd, self.model, self.obs_model)
        streams = sim_streams(config.seed, sim_id)
        self.streams = streams
        self.availability = AvailabilityState(
            n_workers=config.n_workers,
            beta=config.beta,
            dt=config.dt,
            forced=not config.straggle,
        )
        r_full = self._warmup(streams)
        x0 = draw_initial_state(config.n_vehicles, streams["traj"])
        self.states, self.Z = simulate_arrays(
            self.model, self.obs_model, x0, config.t_steps, streams["traj"]
        )
        x_hat0 = x0 + MONITOR_INIT_STD * streams["init"].standard_normal(scenario.d)
        self.ms = MonitorState(
            x_hat=x_hat0,
            P=MONITOR_INIT_VAR * np.eye(scenario.d),
            r_full=r_full,
        )
        self.t = 0

    def _warmup(self, streams) -> int:
        """Run WARMUP_STEPS with all workers available, then freeze r_full."""
        x0 = draw_initial_state(self.config.n_vehicles, streams["warm_traj"])
        states, Z = simulate_arrays(
            self.model, self.obs_model, x0, WARMUP_STEPS, streams["warm_traj"]
        )
        ms = MonitorState(
            x_hat=x0 + MONITOR_INIT_STD * streams["warm_init"].standard_normal(self.scenario.d),
            P=MONITOR_INIT_VAR * np.eye(self.scenario.d),
            r_full=-1,
        )
        for t in range(1, WARMUP_STEPS + 1):
            stacked = StackedObservation(
                z=Z[t - 1], H=self.obs_model.H, R=self.obs_model.R,
                offsets=self.obs_model.offsets,
            )
            coded = encode_observations(self.cd, stacked, self.rt)
            self._worker_pass(ms, coded, range(self.config.n_workers),
                              streams["warm_worker"], t, warming=True)
        return compute_r_full(self.cd, self.model, self.obs_model, ms.P, self.rt)

    def _worker_pass(self, ms, coded, avail, worker_rng, t, warming=False):
        avail = list(avail)
        gain_table = None
        if self.cd.N_K and avail:
            # identical for every worker this step; computed once and shared
            gain_table = sequential_uncoded_gains(self.model, self.obs_model, ms.P)
        outputs = [
            worker_step(
                self.cd, self.model, self.obs_model, w, ms.x_hat, ms.P,
                coded, worker_rng, t=t, gain_table=gain_table, rt=self.rt,
            )
            for w in avail
        ]
        return monitor_step(
            ms, self.model, self.obs_model, self.cd, outputs, rt=self.rt, warming=warming
        )

    def step(self) -> tuple[StepRecord, float]:
        self.t += 1
        t = self.t
        x_true = self.states[t - 1]
        stacked = StackedObservation(
            z=self.Z[t - 1], H=self.obs_model.H, R=self.obs_model.R,
            offsets=self.obs_model.offsets,
        )
        coded = encode_observations(self.cd, stacked, self.rt)
        avail = step_available(self.availability, t, self.streams["straggler"])
        decoded, rank, n_received = self._worker_pass(
            self.ms, coded, avail, self.streams["worker"], t
        )
        rmse = position_rmse(self.ms.x_hat, x_true, self.scenario.position_indices)
        rec = StepRecord(sim_id=-1, t=t, rmse=rmse, decoded=decoded,
                         rank=rank, n_received=n_received)
        return rec, len(avail) / self.config.n_workers


class _UncodedEngine:
    """Baseline: raw observations split over workers, monitor averages estimates."""

    def __init__(self, config: RunConfig, scenario: VehicleScenario, sim_id: int):
        self.config = config
        self.scenario = scenario
        self.model = scenario.model
        self.obs_model = scenario.obs_model
        streams = sim_streams(config.seed, sim_id)
        self.streams = streams
        self.availability = AvailabilityState(
            n_workers=config.n_workers, beta=config.beta, dt=config.dt,
            forced=not config.straggle,
        )
        x0 = draw_initial_state(config.n_vehicles, streams["traj"])
        self.states, self.Z = simulate_arrays(
            self.model, self.obs_model, x0, config.t_steps, streams["traj"]
        )
        x_hat0 = x0 + MONITOR_INIT_STD * streams["init"].standard_normal(scenario.d)
        self.fs = FilterState(x_hat=x_hat0, P=MONITOR_INIT_VAR * np.eye(scenario.d), t=0)
        n_obs = len(self.obs_model.observers)
        self.assignments = [
            [o for o in range(n_obs) if o % config.n_workers == w]
            for w in range(config.n_workers)
        ]
        self.t = 0

    def step(self) -> tuple[StepRecord, float]:
        self.t += 1
        t = self.t
        x_true = self.states[t - 1]
        z = self.Z[t - 1]
        avail = step_available(self.availability, t, self.streams["straggler"])
        received = []
        for w in avail:
            subset = [
                (self.obs_model.observers[o], z[self.obs_model.offsets[o]])
                for o in self.assignments[w]
            ]
            received.append(uncoded_worker_update(self.model, self.fs, subset))
        if received:
            self.fs = average_estimates(received)
        else:
            x_tilde, P_tilde = predict(self.model, self.fs)
            self.fs = FilterState(x_hat=x_tilde, P=symmetrize(P_tilde), t=self.fs.t + 1)
        rmse = position_rmse(self.fs.x_hat, x_true, self.scenario.position_indices)
        rec = StepRecord(sim_id=-1, t=t, rmse=rmse, decoded=bool(received),
                         rank=0, n_received=len(received))
        return rec, len(avail) / self.config.n_workers


class _IdealEngine:
    """Centralized tracker with unlimited capacity: full sequential update per step."""

    def __init__(self, config: RunConfig, scenario: VehicleScenario, sim_id: int):
        self.config = config
        self.scenario = scenario
        self.model = scenario.model
        self.obs_model = scenario.obs_model
        streams = sim_streams(config.seed, sim_id)
        x0 = draw_initial_state(config.n_vehicles, streams["traj"])
        self.states, self.Z = simulate_arrays(
            self.model, self.obs_model, x0, config.t_steps, streams["traj"]
        )
        x_hat0 = x0 + MONITOR_INIT_STD * streams["init"].standard_normal(scenario.d)
        self.fs = FilterState(x_hat=x_hat0, P=MONITOR_INIT_VAR * np.eye(scenario.d), t=0)
        self.t = 0

    def step(self) -> tuple[StepRecord, float]:
        self.t += 1
        t = self.t
        x_true = self.states[t - 1]
        stacked = StackedObservation(
            z=self.Z[t - 1], H=self.obs_model.H, R=self.obs_model.R,
            offsets=self.obs_model.offsets,
        )
        self.fs = update_all(self.model, self.fs, stacked)
        rmse = position_rmse(self.fs.x_hat, x_true, self.scenario.position_indices)
        rec = StepRecord(sim_id=-1, t=t, rmse=rmse, decoded=True,
                         rank=self.scenario.d, n_received=1)
        return rec, 1.0


_ENGINES = {
    "replication": _CodedEngine,
    "mds": _CodedEngine,
    "uncoded": _UncodedEngine,
    "ideal": _IdealEngine,
}


def make_engine(config: RunConfig, sim_id: int):
    scenario = build_scenario(config.n_vehicles, config.s, config.dt, config.sigmas)
    return _ENGINES[config.scheme](config, scenario, sim_id)


def run_simulation(config: RunConfig, sim_id: int) -> tuple[list[StepRecord], float]:
    """One independent simulation: T step records plus its availability fraction."""
    engine = make_engine(config, sim_id)
    records = []
    avail_sum = 0.0
    for _ in range(config.t_steps):
        rec, frac = engine.step()
        rec.sim_id = sim_id
        records.append(rec)
        avail_sum += frac
    return records, avail_sum / config.t_steps


# --- metrics --------------------------------------------------------------------------

def transient_cutoff(m: np.ndarray) -> int:
    """Smallest 1-based t0 whose split means agree within 10%; T if none do.

    The series tail from t0 splits at t_m = t0 + floor((T - t0) / 2); t0
    qualifies when |mean(first half) - mean(second half)| <= 0.1 * max(means).
    """
    m = np.asarray(m, dtype=float)
    T = m.size
    if T < 4:
        raise ConfigurationError(f"transient_cutoff needs T >= 4, got {T}")
    csum = np.concatenate([[0.0], np.cumsum(m)])
    t0s = np.arange(1, T)
    tms = t0s + (T - t0s) // 2
    mean_a = (csum[tms] - csum[t0s - 1]) / (tms - t0s + 1)
    mean_b = (csum[T] - csum[tms]) / (T - tms)
    ok = np.abs(mean_a - mean_b) <= 0.1 * np.maximum(mean_a, mean_b)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        logger.warning("transient_cutoff: criterion never satisfied, t0 = T")
        return T
    return int(t0s[hits[0]])


def nearest_rank_percentile(samples: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest sample."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n == 0:
        raise ConfigurationError("percentile of an empty sample set")
    k = max(1, math.ceil(pct / 100.0 * n))
    return float(samples[k - 1])


def aggregate(
    config: RunConfig,
    records: list[StepRecord],
    availability_by_sim: dict[int, float],
) -> SummaryRecord:
    """Concatenate post-cutoff RMSE samples across simulations and summarize."""
    by_sim: dict[int, list[float]] = {}
    for rec in records:
        by_sim.setdefault(rec.sim_id, []).append(rec.rmse)
    t0s, tails = [], []
    for sim_id in sorted(by_sim):
        series = np.asarray(by_sim[sim_id])
        t0 = transient_cutoff(series)
        t0s.append(t0)
        tails.append(series[t0 - 1 :])
    samples = np.concatenate(tails)
    if samples.size == 0:
        raise ConfigurationError("no samples survive the transient cutoff")
    return SummaryRecord(
        config=config,
        t0_mean=float(np.mean(t0s)),
        rmse_p90=nearest_rank_percentile(samples, 90.0),
        rmse_mean=float(np.mean(samples)),
        availability=float(np.mean([availability_by_sim[s] for s in sorted(by_sim)])),
    )


# --- experiment driver ----------------------------------------------------------------

def run_experiment(
    config: RunConfig,
    out_dir: str | Path | None = None,
    max_workers: int = 1,
    quiet: bool = False,
) -> tuple[SummaryRecord, list[StepRecord]]:
    """Run n_sims independent simulations, aggregate, and optionally write outputs."""
    sim_ids = list(range(config.n_sims))
    results: dict[int, tuple[list[StepRecord], float]] = {}
    if max_workers > 1 and config.n_sims > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            for sim_id, res in zip(
                sim_ids, pool.map(run_simulation, [config] * len(sim_ids), sim_ids)
            ):
                results[sim_id] = res
                if not quiet:
                    logger.info("sim %d/%d done", sim_id + 1, config.n_sims)
    else:
        for sim_id in sim_ids:
            results[sim_id] = run_simulation(config, sim_id)
            if not quiet:
                logger.info("sim %d/%d done", sim_id + 1, config.n_sims)
    records = [rec for sim_id in sim_ids for rec in results[sim_id][0]]
    availability = {sim_id: results[sim_id][1] for sim_id in sim_ids}
    summary = aggregate(config, records, availability)
    if out_dir is not None:
        write_outputs(Path(out_dir), summary, records)
    return summary, records


# --- files ----------------------------------------------------------------------------

STEPS_HEADER = "sim_id,t,rmse,decoded,rank,n_received"
SUMMARY_HEADER = "scheme,rate,n_workers,dt,beta,t0_mean,rmse_p90,rmse_mean,availability"


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def summary_row(s: SummaryRecord) -> str:
    c = s.config
    return ",".join(
        [
            c.scheme,
            _fmt(c.rate),
            str(c.n_workers),
            _fmt(c.dt),
            _fmt(c.beta),
            _fmt(s.t0_mean),
            _fmt(s.rmse_p90),
            _fmt(s.rmse_mean),
            _fmt(s.availability),
        ]
    )


def write_steps_csv(path: Path, records: list[StepRecord]) -> None:
    lines = [STEPS_HEADER]
    lines.extend(
        f"{r.sim_id},{r.t},{_fmt(r.rmse)},{int(r.decoded)},{r.rank},{r.n_received}"
        for r in records
    )
    path.write_text("\n".join(lines) + "\n")


def write_summary_csv(path: Path, summaries: list[SummaryRecord]) -> None:
    lines = [SUMMARY_HEADER]
    lines.extend(summary_row(s) for s in summaries)
    path.write_text("\n".join(lines) + "\n")


def write_outputs(out_dir: Path, summary: SummaryRecord, records: list[StepRecord]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_steps_csv(out_dir / "steps.csv", records)
    write_summary_csv(out_dir / "summary.csv", [summary])
    config = summary.config
    scenario = build_scenario(config.n_vehicles, config.s, config.dt, config.sigmas)
    cd = build_design(config, scenario)
    try:
        version = importlib.metadata.version("codedtrack")
    except importlib.metadata.PackageNotFoundError:
        version = "unknown"
    meta = {
        "version": version,
        "config": dataclasses.asdict(config),
        "design": json.loads(design_metadata(cd, seed=config.seed)) if cd else None,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


# --- config files ---------------------------------------------------------------------

CONFIG_KEYS = {
    "scheme": str,
    "n_vehicles": int,
    "s": int,
    "n_workers": int,
    "rate": "rate",
    "dt": float,
    "beta": float,
    "t_steps": int,
    "n_sims": int,
    "seed": int,
    "sigma_a": float,
    "sigma_gnss": float,
    "sigma_v2v": float,
    "sigma_speed": float,
}


def parse_rate(text: str) -> float:
    """Rate as a decimal or a fraction like 1/3."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_config_file(path: str | Path, **overrides) -> RunConfig:
    """Flat key-value config (key = value per line, # comments allowed)."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        conv = CONFIG_KEYS[key]
        values[key] = parse_rate(value) if conv == "rate" else conv(value)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "scheme" not in values:
        raise ConfigurationError(f"{path}: missing required key 'scheme'")
    return RunConfig(**values)
