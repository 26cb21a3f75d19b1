import numpy as np
import pytest


def random_hpd(rng, order, loading=1.0):
    """Random Hermitian PD matrix A A^H + loading * I."""
    a = rng.standard_normal((order, order)) + 1j * rng.standard_normal((order, order))
    m = a @ a.conj().T + loading * np.eye(order)
    return 0.5 * (m + m.conj().T)


def random_hpd_stack(rng, shape, order, loading=1.0):
    a = rng.standard_normal(shape + (order, order)) + 1j * rng.standard_normal(
        shape + (order, order)
    )
    m = a @ a.conj().swapaxes(-1, -2) + loading * np.eye(order)
    return 0.5 * (m + m.conj().swapaxes(-1, -2))


def random_observation(rng, channels, frames, bins):
    from fcasep.stft import ObservationTensor

    data = rng.standard_normal((channels, frames, bins)) + 1j * rng.standard_normal(
        (channels, frames, bins)
    )
    return ObservationTensor(data)


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
