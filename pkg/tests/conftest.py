import numpy as np
import pytest

from burgers_control.noise import CovarianceOperator, LevyModel, NoiseModel
from burgers_control.spectral import SpectralField


def smooth_field(rng: np.random.Generator, m: int, amplitude: float = 1.0) -> SpectralField:
    """Random field with a decaying spectrum (states of this system are
    smooth: the semigroup and trace-class noise damp high modes)."""
    k = np.arange(1, m + 1)
    return SpectralField(amplitude * rng.standard_normal(m) / k)


def flat_field(rng: np.random.Generator, m: int, amplitude: float = 1.0) -> SpectralField:
    return SpectralField(amplitude * rng.standard_normal(m))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


@pytest.fixture
def standard_cov():
    return CovarianceOperator.a_power(0.75)


@pytest.fixture
def symmetric_levy():
    return LevyModel(atoms=((1.0, 0.5), (-1.0, 0.5)), sigma_j=0.3)


@pytest.fixture
def standard_noise(standard_cov, symmetric_levy):
    return NoiseModel(covariance=standard_cov, levy=symmetric_levy)


@pytest.fixture
def gaussian_only(standard_cov):
    return NoiseModel(covariance=standard_cov)
