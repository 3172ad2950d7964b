import numpy as np
import pytest

from csikit.core import (SPEED_OF_LIGHT, ChannelConfig, as_tensor, cfr_to_cir, unwrap_phase,
                         validate_tensor, wrap_phase)
from csikit.errors import ConfigError, DataError


def test_default_config_matches_reference_grid(cfg):
    f = cfg.subcarrier_freqs
    assert f.size == 57
    assert f[0] == 5.8153e9 and f[-1] == 5.8347e9
    assert cfg.bandwidth == 2e7
    assert np.allclose(cfg.wavelengths, SPEED_OF_LIGHT / f)
    assert np.allclose(cfg.wavenumbers, 2 * np.pi / cfg.wavelengths)
    assert np.all(cfg.antenna_locations[0] == 0)


@pytest.mark.parametrize("bad", [
    {"subcarrier_freqs": [2e9, 1e9]},
    {"antenna_locations": [[0.1, 0, 0], [0, 0, 0]]},
    {"bandwidth": -1.0},
    {"antenna_locations": [[0, 0]]},
])
def test_config_invariants(bad):
    with pytest.raises(DataError):
        ChannelConfig.from_dict(bad)


def test_config_dict_round_trip(cfg):
    again = ChannelConfig.from_dict(cfg.to_dict())
    assert np.array_equal(again.subcarrier_freqs, cfg.subcarrier_freqs)
    spec = ChannelConfig.from_dict({"subcarrier_freqs": {"start": 5.8153e9, "stop": 5.8347e9, "num": 57}})
    assert np.array_equal(spec.subcarrier_freqs, cfg.subcarrier_freqs)
    with pytest.raises(ConfigError):
        ChannelConfig.from_dict({"bandwith": 1})


def test_validate_well_formed():
    assert validate_tensor(np.ones((10, 57, 3, 1), complex)).ok


def test_validate_reports_nan_index():
    x = np.ones((2, 3, 2, 1), complex)
    x[1, 2, 0, 0] = np.nan
    rep = validate_tensor(x)
    assert not rep.ok
    assert rep.nonfinite_indices.tolist() == [np.ravel_multi_index((1, 2, 0, 0), x.shape)]


def test_validate_length_mismatch():
    rep = validate_tensor(np.ones(11), dims=(2, 3, 2, 1))
    assert rep.dim_mismatches and not rep.nonfinite_indices.size


def test_validate_is_pure():
    x = np.ones((2, 3, 2, 1), complex)
    x[0, 0, 0, 0] = np.inf
    before = x.copy()
    a, b = validate_tensor(x), validate_tensor(x)
    assert np.array_equal(a.nonfinite_indices, b.nonfinite_indices)
    assert np.array_equal(x, before, equal_nan=True)


def test_as_tensor_rejects_and_expands():
    assert as_tensor(np.ones((2, 3, 4))).shape == (2, 3, 4, 1)
    with pytest.raises(DataError):
        as_tensor(np.ones((2, 3)))
    with pytest.raises(DataError):
        as_tensor(np.full((1, 1, 1, 1), np.nan))


def test_cir_of_flat_cfr_is_impulse():
    cir = cfr_to_cir(np.ones((1, 57, 1, 1)), 2e7, 64)
    mag = np.abs(cir.data[0, :, 0])
    assert np.argmax(mag) == 0
    assert mag[0] > 2 * np.sort(mag)[-2]
    assert cir.bin_duration == pytest.approx(57 / (64 * 2e7))


@pytest.mark.parametrize("k", [0, 1, 5, 13, 40])
def test_cir_on_grid_delay_peak(k):
    # on-grid delay for the index-based DFT: tau = k / (ifft_len * df) with df the tone spacing
    S, n = 57, 64
    j = np.arange(S)
    cfr = np.exp(-2j * np.pi * j * k / n)
    oracle = np.array([np.sum(cfr * np.exp(2j * np.pi * j * m / n)) / n for m in range(n)])
    cir = cfr_to_cir(cfr.reshape(1, S, 1, 1), 2e7, n)
    assert np.allclose(cir.data[0, :, 0], oracle)
    assert np.argmax(np.abs(oracle)) == k


def test_cir_linearity(rng):
    X = rng.standard_normal((3, 57, 2, 2)) + 1j * rng.standard_normal((3, 57, 2, 2))
    Y = rng.standard_normal((3, 57, 2, 2)) + 1j * rng.standard_normal((3, 57, 2, 2))
    a, b = 0.3 - 2j, 1.7
    lhs = cfr_to_cir(a * X + b * Y, 2e7, 64).data
    rhs = a * cfr_to_cir(X, 2e7, 64).data + b * cfr_to_cir(Y, 2e7, 64).data
    assert np.allclose(lhs, rhs)


def test_cir_round_trip(rng):
    X = rng.standard_normal((4, 57, 3, 1)) + 1j * rng.standard_normal((4, 57, 3, 1))
    cir = cfr_to_cir(X, 2e7, 64)
    back = np.fft.fft(cir.data, axis=1)[:, :57]
    assert np.max(np.abs(back - X[..., 0])) / np.max(np.abs(X)) < 1e-9


def test_cir_short_ifft():
    with pytest.raises(DataError):
        cfr_to_cir(np.ones((1, 57, 1, 1)), 2e7, 32)


def test_unwrap_examples():
    assert np.allclose(unwrap_phase([0, 0.1, 0.2]), [0, 0.1, 0.2])
    assert np.allclose(unwrap_phase([3.0, -3.0]), [3.0, 2 * np.pi - 3.0])
    assert unwrap_phase([3.0, -3.0])[1] == pytest.approx(3.2832, abs=1e-4)
    with pytest.raises(DataError):
        unwrap_phase([])


def test_unwrap_properties(rng):
    x = rng.uniform(-np.pi, np.pi, 200)
    u = unwrap_phase(x)
    assert u[0] == x[0]
    assert np.all(np.abs(np.diff(u)) <= np.pi + 1e-12)
    k = (u - x) / (2 * np.pi)
    assert np.allclose(k, np.round(k))
    assert np.allclose(wrap_phase(u), wrap_phase(x))


def test_wrap_phase_range():
    x = np.linspace(-20, 20, 1001)
    w = wrap_phase(x)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    assert wrap_phase(np.pi) == pytest.approx(np.pi)
    assert wrap_phase(-np.pi) == pytest.approx(np.pi)
