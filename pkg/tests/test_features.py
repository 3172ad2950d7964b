import numpy as np
import pytest
from scipy.optimize import brentq

from csikit.core import SPEED_OF_LIGHT, ChannelConfig
from csikit.errors import DataError, NoMotionDetected, NumericError
from csikit.features import (SINC_PEAK_X0, angular_error_deg, doppler_spectrogram, estimate_speed,
                             grid_directions, music_spectrum, naive_aoa, naive_tof, power_acf,
                             speed_from_acf, steering_vectors)
from csikit.sim import (ErrorModel, MultipathChannel, Path, Scatterer, ScatterScene, inject_errors,
                        synth_ray_tracing, synth_scattering)


def dft_peak_bin(distance, cfg, n=64):
    """Peak of the zero-padded inverse DFT evaluated term by term."""
    f = cfg.subcarrier_freqs
    h = np.exp(-2j * np.pi * f * distance / SPEED_OF_LIGHT)
    m = np.arange(n // 2)
    taps = np.array([abs(np.sum(h * np.exp(2j * np.pi * np.arange(f.size) * k / n))) for k in m])
    return int(np.argmax(taps))


def test_tof_ten_metres(cfg):
    H = synth_ray_tracing(MultipathChannel.single(10.0), cfg, 10)[:, :, :1]
    tof = naive_tof(H, cfg)
    bin_m = SPEED_OF_LIGHT * 57 / (64 * cfg.bandwidth)
    assert dft_peak_bin(10.0, cfg) == 1
    assert np.allclose(tof * SPEED_OF_LIGHT, bin_m)
    assert abs(tof.mean() * SPEED_OF_LIGHT - 10.0) <= bin_m


def test_tof_zero_delay_and_range(cfg):
    H = synth_ray_tracing(MultipathChannel((Path(1.0, 0.0),)), cfg, 2)
    assert np.all(naive_tof(H, cfg) == 0)
    far = synth_ray_tracing(MultipathChannel.single(500.0), cfg, 2)
    tof = naive_tof(far, cfg)
    bin_s = 57 / (64 * cfg.bandwidth)
    assert np.all(tof < 32 * bin_s)
    assert np.all(tof == dft_peak_bin(500.0, cfg) * bin_s)


def test_tof_agc_invariant(cfg):
    H = synth_ray_tracing(MultipathChannel((Path(1.0, 25 / SPEED_OF_LIGHT), Path(0.6, 60 / SPEED_OF_LIGHT))), cfg, 8)
    g = np.linspace(0.2, 5, 8)
    assert np.array_equal(naive_tof(H, cfg), naive_tof(H * g[:, None, None, None], cfg))


def test_aoa_broadside(cfg):
    H = synth_ray_tracing(MultipathChannel.single(10.0), cfg, 20)
    aoa = naive_aoa(H, cfg)
    assert aoa.shape == (3, 20)
    assert np.allclose(np.linalg.norm(aoa, axis=0), 1, atol=1e-9)
    assert np.allclose(aoa, [[0], [0], [1]], atol=1e-6)
    assert angular_error_deg([0, 0, 1], aoa).mean() < 2


# baselines are about one wavelength long, so direction cosines must stay
# below 0.5 in magnitude for the phase differences not to wrap
@pytest.mark.parametrize("e", [(0.3, 0.2, 0.93), (-0.4, 0.35, 0.85), (0.1, -0.45, 0.89)])
def test_aoa_oblique_and_scale_invariant(cfg, e):
    H = synth_ray_tracing(MultipathChannel.single(7.0, direction=e), cfg, 5)
    aoa = naive_aoa(H, cfg)
    assert angular_error_deg(e, aoa).max() < 0.5
    assert np.allclose(naive_aoa(H * (0.3 - 2j), cfg), aoa, atol=1e-9)


def test_aoa_rco_correction(cfg):
    H = synth_ray_tracing(MultipathChannel.single(10.0), cfg, 20)
    rco = np.array([0, 0.7, -1.1])
    dirty = inject_errors(H, ErrorModel(rco=rco), cfg)
    raw = angular_error_deg([0, 0, 1], naive_aoa(dirty, cfg)).mean()
    fixed = angular_error_deg([0, 0, 1], naive_aoa(dirty, cfg, rco=rco)).mean()
    assert fixed < raw
    assert fixed < 2


def test_aoa_degenerate_geometry(cfg):
    H = np.ones((2, 57, 3, 1), complex)
    line = np.array([[0, 0, 0], [0.05, 0, 0], [0.1, 0, 0]])
    with pytest.raises(DataError):
        naive_aoa(H, cfg, antenna_locations=line)


# MUSIC ------------------------------------------------------------------

LAM = 0.06
ULA = np.arange(8) * LAM / 2


def snapshots(angles, K, snr_db, rng):
    A = steering_vectors(ULA, LAM, grid_directions(angles)).T  # M x D
    s = (rng.standard_normal((len(angles), K)) + 1j * rng.standard_normal((len(angles), K))) / np.sqrt(2)
    X = A @ s
    if snr_db is not None:
        sigma = 10 ** (-snr_db / 20)
        X = X + sigma / np.sqrt(2) * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    return X


def test_steering_matches_simulator_sign(cfg):
    e = np.array([0.3, 0.2, 0.93]) / np.linalg.norm([0.3, 0.2, 0.93])
    H = synth_ray_tracing(MultipathChannel.single(5.0, direction=e), cfg, 1)
    j = 28
    a = steering_vectors(cfg.antenna_locations, cfg.wavelengths[j], e[None])[0]
    ratio = H[0, j, :, 0] / H[0, j, 0, 0]
    assert np.allclose(ratio, a)


def test_music_single_source(rng):
    grid = np.arange(-90, 91, 1.0)
    X = snapshots([30.0], 50, None, rng)
    spec = music_spectrum(X, ULA, LAM, grid, 1)
    bartlett = np.abs(steering_vectors(ULA, LAM, grid_directions(grid)).conj() @ X) ** 2
    oracle = grid[np.argmax(bartlett.sum(axis=1))]
    assert abs(grid[np.argmax(spec.q_values)] - oracle) <= 1
    assert abs(spec.peaks(1)[0] - 30) <= 1
    a = steering_vectors(ULA, LAM, grid_directions([30.0]))[0]
    assert np.max(np.abs(a.conj() @ spec.noise_subspace)) <= 1e-8
    assert np.all(spec.q_values > 0) and np.all(np.isfinite(spec.q_values))


def test_music_noise_only_flat(rng):
    grid = np.arange(-90, 91, 1.0)
    for seed in range(5):
        X = snapshots([0.0], 64, 0, np.random.default_rng(seed)) * 0
        X += np.random.default_rng(seed).standard_normal(X.shape) + 0j
        q = music_spectrum(X, ULA, LAM, grid, 0).q_values
        assert 10 * np.log10(q.max() / q.min()) < 3


def test_music_two_sources(rng):
    grid = np.arange(-90, 91, 1.0)
    X = snapshots([-10.0, 10.0], 200, 20, rng)
    peaks = np.sort(music_spectrum(X, ULA, LAM, grid, 2).peaks())
    assert np.all(np.abs(peaks - [-10, 10]) <= 1)


def test_music_errors():
    with pytest.raises(DataError):
        music_spectrum(np.ones((8, 4)), ULA, LAM, [0.0], 1)
    X = np.ones((8, 10), complex)
    X[0, 0] = np.nan
    with pytest.raises(NumericError):
        music_spectrum(X, ULA, LAM, [0.0], 1)


# Doppler ----------------------------------------------------------------

def test_static_spectrogram_energy_at_dc(cfg):
    H = synth_ray_tracing(MultipathChannel.single(10.0), cfg, 400)
    sp = doppler_spectrogram(H, cfg, 125, "rect")
    E = np.abs(sp.data) ** 2
    dc = np.argmin(np.abs(sp.freq_axis))
    assert np.all(np.diff(sp.freq_axis) > 0)
    assert sp.freq_axis[dc] == 0
    assert 1 - E[dc].sum() / E.sum() < 0.01


def test_spectrogram_beat_frequency(cfg):
    rate = 3.0  # m/s path-length change
    ch = MultipathChannel((Path(1.0, 10 / SPEED_OF_LIGHT), Path(0.5, 14 / SPEED_OF_LIGHT, rate)))
    H = synth_ray_tracing(ch, cfg, 1000)
    beat = cfg.subcarrier_freqs.mean() * rate / SPEED_OF_LIGHT
    sp = doppler_spectrogram(H, cfg, 250, "gaussian", nfft=1000)
    E = (np.abs(sp.data) ** 2).sum(axis=1)
    E[np.abs(sp.freq_axis) < 20] = 0
    assert abs(abs(sp.freq_axis[np.argmax(E)]) - beat) <= 1.0


def test_spectrogram_parseval(cfg, rng):
    H = rng.standard_normal((300, 57, 3, 1)) + 1j * rng.standard_normal((300, 57, 3, 1))
    W = 64
    sp = doppler_spectrogram(H, cfg, W, "hann")
    p = np.mean(np.abs(H) ** 2, axis=(1, 2, 3))
    from csikit.spectral import WindowSpec, make_window
    w = make_window(WindowSpec("hann", W))
    frames = np.lib.stride_tricks.sliding_window_view(p, W) * w
    lhs = (np.abs(sp.data) ** 2).sum(axis=0)
    rhs = W * np.sum(frames ** 2, axis=1) / w.sum() ** 2
    assert np.allclose(lhs, rhs, rtol=1e-10)


def test_spectrogram_window_too_long(cfg):
    with pytest.raises(DataError):
        doppler_spectrogram(np.ones((10, 57, 3, 1)), cfg, 20)


# Speed ------------------------------------------------------------------

def second_root_tan_x_eq_x():
    return brentq(lambda x: x * np.cos(x) - np.sin(x), 2 * np.pi, 2.5 * np.pi, xtol=1e-14)


def test_x0_root_finding():
    assert abs(second_root_tan_x_eq_x() - SINC_PEAK_X0) < 1e-4


@pytest.mark.parametrize("v", [0.6, 1.2, 1.8])
def test_speed_from_analytic_sinc(v, cfg):
    lam = float(np.mean(cfg.wavelengths))
    k = 2 * np.pi / lam
    t = np.arange(400) / cfg.sample_rate
    rho = np.sinc(k * v * t / np.pi)
    est_v, tau0 = speed_from_acf(rho, cfg.sample_rate, lam)
    true_tau0 = second_root_tan_x_eq_x() / (k * v)
    assert abs(tau0 - true_tau0) <= 1 / cfg.sample_rate


def test_static_scene_no_motion(cfg):
    H, _ = synth_scattering(ScatterScene(1.0), cfg, 1000, seed=0)
    with pytest.raises(NoMotionDetected):
        estimate_speed(H, cfg, 0.3)


def test_speed_power_invariant(cfg):
    a, _ = synth_scattering(ScatterScene(1.0, (Scatterer(1.2, 1.0, 300),)), cfg, 1000, seed=9)
    b, _ = synth_scattering(ScatterScene(3.0, (Scatterer(1.2, 3.0, 300),)), cfg, 1000, seed=9)
    assert estimate_speed(a, cfg, 0.3).v == pytest.approx(estimate_speed(b, cfg, 0.3).v)


def test_speed_preconditions(cfg):
    with pytest.raises(DataError):
        estimate_speed(np.ones((100, 57, 3, 1)), cfg, 0.3)
