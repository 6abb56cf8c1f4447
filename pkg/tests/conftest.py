import numpy as np
import pytest

from nmgeo import ModelParams, solve_g

# reference point used throughout: gamma_w = 0.9, kappa = 0.43, Gamma_w = 1
REF_POINT = dict(kappa=0.43, gamma_w=0.9)

# Markovian and non-divergent-non-Markovian reference points
MARKOV_POINT = dict(kappa=0.1, gamma_w=0.9)
EXCEPTION_POINT = dict(kappa=0.23, gamma_w=0.3)


@pytest.fixture(scope="session")
def ref_params():
    return ModelParams(**REF_POINT)


@pytest.fixture(scope="session")
def ref_gsol(ref_params):
    return solve_g(ref_params)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260809)
