import numpy as np
import pytest

from topseg.embed import ScaleConfig, average_mutual_information, default_scales, delay_embed
from topseg.errors import ConfigError, InsufficientLengthError
from topseg.signal import Recording


def test_table_of_scales():
    rows = {s.name: (s.stream_rate, s.tau, s.dim, s.window) for s in default_scales()}
    assert rows["Global2"] == (60.0, 0.1, 21, pytest.approx(2.0))
    assert rows["Global4"] == (60.0, 0.2, 21, pytest.approx(4.0))
    assert rows["Global8"] == (60.0, 0.2, 41, pytest.approx(8.0))
    assert rows["Meso"] == (600.0, 0.025, 21, pytest.approx(0.5))
    assert rows["Fine"] == (600.0, 0.01, 11, pytest.approx(0.1))
    assert [s.lag for s in default_scales()] == [6, 12, 12, 15, 6]


def test_delay_embedding_layout():
    sc = ScaleConfig("Fine", 600.0, 0.01, 3)
    x = np.arange(20, dtype=float)
    traj = delay_embed(Recording("x", x, 600.0), sc)
    assert traj.points.shape == (20 - 12, 3)
    assert traj.points[0].tolist() == [0, 6, 12]
    assert traj.points[-1].tolist() == [7, 13, 19]


def test_embedding_errors():
    sc = ScaleConfig("Fine", 600.0, 0.01, 11)
    with pytest.raises(ConfigError):
        delay_embed(Recording("x", np.zeros(100), 60.0), sc)
    with pytest.raises(InsufficientLengthError):
        delay_embed(Recording("x", np.zeros(60), 600.0), sc)
    with pytest.raises(ConfigError):
        ScaleConfig("Fine", 600.0, 0.0101, 11)
    with pytest.raises(ConfigError):
        ScaleConfig("Nope", 600.0, 0.01, 11)


def test_ami_decays_for_noise_and_not_for_slow_sine(rng):
    noise = average_mutual_information(rng.standard_normal(20000), 5)
    assert np.all(noise < 0.05)
    t = np.arange(20000) / 600.0
    sine = average_mutual_information(np.sin(2 * np.pi * 2 * t), 5)
    assert np.all(sine > 1.0)
