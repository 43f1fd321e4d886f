import numpy as np
import pytest

from pulseprobe import DetectionSpec, FieldSpec, ModelConfig
from pulseprobe.pulses import PulseShape


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_config(**overrides) -> ModelConfig:
    """Small, fast default instance used across the unit tests."""
    kw = dict(
        pulse=PulseShape.gaussian(2.0, 0.35),
        field=FieldSpec.fock(1),
        atom_init="1",
        gamma=1.0,
        dt=2e-3,
        t_final=8.0,
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def random_density(dim, rng, pure=False):
    """Random full-rank (or pure) density matrix."""
    if pure:
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        v /= np.linalg.norm(v)
        return np.outer(v, v.conj())
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = x @ x.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def counting_config():
    return make_config()


@pytest.fixture
def homodyne_config():
    return make_config(field=FieldSpec.fock(2), cavity_dim=3, detection=DetectionSpec("homodyne"))
