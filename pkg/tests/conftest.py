import numpy as np
import pytest

from rebalfreq import BlackScholesModel, TruncatedKimOmbergModel

# Benchmark parameter sets used throughout the suite.
BS1D = dict(mu=[0.08], vol=[0.16])
GAMMA = 5.0
EPS = 0.01

KO_PARAMS = dict(
    mean_reversion=0.2712,
    long_run_mean=0.056,
    state_vol=0.0368,
    state_correlation=-0.9351,
)


@pytest.fixture(scope="session")
def bs1d():
    return BlackScholesModel(**BS1D)


@pytest.fixture(scope="session")
def bs2d():
    def make(rho):
        return BlackScholesModel(
            mu=[0.08, 0.08], vol=[0.16, 0.16], correlation=[[1.0, rho], [rho, 1.0]]
        )

    return make


@pytest.fixture(scope="session")
def ko1d():
    return TruncatedKimOmbergModel(vol=[0.1428], **KO_PARAMS)


@pytest.fixture(scope="session")
def ko2d():
    def make(rho):
        return TruncatedKimOmbergModel(
            vol=[0.1428, 0.1428],
            correlation=[[1.0, rho], [rho, 1.0]],
            **KO_PARAMS,
        )

    return make


@pytest.fixture(scope="session")
def ko1d_tight():
    # cutoffs chosen so the target weight stays strictly inside (0, 1)
    return TruncatedKimOmbergModel(
        vol=[0.1428],
        cutoff_low=0.012,
        cutoff_high=0.100,
        cutoff_width=0.01,
        **KO_PARAMS,
    )


def sample_support_states(model, n, seed=0, spread=1.0):
    """Random states inside the model's support (or empty states for p=0)."""
    rng = np.random.default_rng(seed)
    if model.p == 0:
        return np.zeros((n, 0))
    lo, hi = model.support[:, 0], model.support[:, 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid + (2.0 * rng.random((n, model.p)) - 1.0) * half * spread
