import os

# Pin BLAS threads before numpy loads anywhere: the dense problems here are
# small, and the experiment fixtures parallelize at the process level instead.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from codedtrack.model import Observer


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_observers(rng, d, n_obs, h_o, seed_ids=True):
    """Random well-conditioned observers sharing state dimension d."""
    observers = []
    for o in range(n_obs):
        H = rng.standard_normal((h_o, d))
        G = rng.standard_normal((h_o, h_o))
        R = G @ G.T + 0.5 * np.eye(h_o)
        observers.append(Observer(id=o, H=H, R=R))
    return observers


def random_spd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T + 0.1 * np.eye(n))


# --- shared experiment cache (acceptance + harness property tests) ----------------------

@pytest.fixture(scope="session")
def run_cache():
    """Memoized experiment summaries keyed by RunConfig; shared across modules."""
    return {}


def cached_summary(cache, config):
    from codedtrack.harness import run_experiment

    if config not in cache:
        cache[config], _ = run_experiment(config, max_workers=2, quiet=True)
    return cache[config]


def continuous_renewal_duty(beta, dt, horizon_steps, rng):
    """Independent oracle: continuous-time compute/unavailable cycles.

    A worker computes for dt seconds, is unavailable Exp(1/beta), and starts
    the next task immediately; it contributes to the step its task completes
    in.  Returns the fraction of steps containing a completion.
    """
    horizon = horizon_steps * dt
    n_cycles = int(horizon / (dt + 1.0 / beta) * 2) + 1000
    cycles = dt + rng.exponential(1.0 / beta, size=n_cycles)
    completions = np.cumsum(cycles)
    completions = completions[completions <= horizon]
    steps_hit = np.unique(np.ceil(completions / dt).astype(int))
    return steps_hit.size / horizon_steps
