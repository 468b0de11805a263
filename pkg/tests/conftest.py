import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# The two shared Monte Carlo runs behind the acceptance criteria: the
# strong-instrument and weak-instrument cells at rho = 0.5, 200
# replications, tune-once mode. Session-scoped so the ~4 minutes per cell
# are paid once.

MC_SEED = 42
MC_REPS = 200


def _mc_cell(alpha1, threads=2):
    from hdiv.simulation import SimulationConfig, build_truth, run_monte_carlo

    config = SimulationConfig(
        n=100, p=200, q=200, rho=0.5, alpha1=alpha1,
        replications=MC_REPS, seed=MC_SEED, level=0.95, tuning_mode="once",
    )
    truth = build_truth(config)
    summary = run_monte_carlo(truth, config, threads=threads)
    return config, truth, summary


@pytest.fixture(scope="session")
def mc_strong():
    return _mc_cell(alpha1=1.0)


@pytest.fixture(scope="session")
def mc_weak():
    return _mc_cell(alpha1=0.25)
