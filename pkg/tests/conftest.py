"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from actdet.sysmodel import ActivityModel, SystemConfig


def random_hermitian_pd(rng, size, shift=1.0):
    """B B^H + shift*I for complex Gaussian B: Hermitian and PD."""
    b = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    a = b @ b.conj().T / size
    return (a + a.conj().T) / 2.0 + shift * np.eye(size)


def unit_noise_config(n_devices=40, pilot_len=8, n_antennas=32, seed=0,
                      p=0.1, group=None):
    """Desk-scale scenario at O(1) scales: unit noise, gains in [0.18, 1].

    With tx power 0 dBm and wavelength 4*pi the pathloss law reduces to
    d**-eta on distances in [1, 2], which keeps finite-difference oracles
    and gradient tolerances meaningful in float64.
    """
    activity = ActivityModel.iid(p) if group is None \
        else ActivityModel.group(*group)
    return SystemConfig(
        n_devices=n_devices, pilot_len=pilot_len, n_antennas=n_antennas,
        noise_power=1.0, tx_power_dbm=0.0, d_inner=1.0, d_outer=2.0,
        pathloss_exp=2.5, wavelength=4.0 * np.pi, activity=activity, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
