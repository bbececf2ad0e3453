import numpy as np
import pytest

from locodec.sessions import REGIONS, SIDES, Session


def make_session(
    n_channels=4,
    n_samples=400,
    seed=0,
    session_id="s01",
    rat_id="rat01",
    speed=None,
    eeg=None,
):
    """Random but reproducible session for unit tests.

    Region/side labels follow the paired-electrode layout used by the
    synthetic generator: regions cycle every two channels, sides alternate.
    """
    rng = np.random.default_rng(seed)
    if eeg is None:
        eeg = rng.normal(size=(n_channels, n_samples))
    else:
        eeg = np.asarray(eeg, dtype=np.float64)
        n_channels = eeg.shape[0]
    if speed is None:
        speed = np.abs(rng.normal(loc=2.0, scale=1.0, size=eeg.shape[1]))
    return Session(
        id=session_id,
        rat_id=rat_id,
        sample_rate_hz=100.0,
        eeg=eeg,
        speed=speed,
        region_map=tuple(REGIONS[(c // 2) % len(REGIONS)] for c in range(n_channels)),
        side_map=tuple(SIDES[c % 2] for c in range(n_channels)),
    )


@pytest.fixture
def session():
    return make_session()
