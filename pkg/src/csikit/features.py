"""Geometric, Doppler and statistical features from CSI tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChannelConfig, as_tensor, cfr_to_cir, wrap_phase
from .errors import DataError, NoMotionDetected, NumericError
from .spectral import Spectrogram, WindowSpec, make_window, stft

#: first secondary maximum of sin(x)/x, i.e. the second positive root of tan(x) = x
SINC_PEAK_X0 = 7.7253


# ---------------------------------------------------------------- ToF

def naive_tof(csi, cfg: ChannelConfig) -> np.ndarray:
    """ToF of the strongest path per packet and antenna, shape ``(T, A)``.

    The IFFT length is the next power of two >= S; only the first half of the
    delay bins is searched, so delays beyond half the window alias into it.
    """
    H = as_tensor(csi)
    S = H.shape[1]
    ifft_len = 1 << (S - 1).bit_length()
    cir = cfr_to_cir(H, cfg.bandwidth, ifft_len)
    half = np.abs(cir.data[:, : ifft_len // 2, :])
    peak = np.argmax(half, axis=1)
    return peak * cir.bin_duration


# ---------------------------------------------------------------- AoA

def _baselines(antenna_locations):
    locs = np.asarray(antenna_locations, dtype=float)
    if locs.ndim != 2 or locs.shape[1] != 3 or locs.shape[0] < 3:
        raise DataError("naive AoA needs at least 3 antennas with 3-D locations")
    diff = locs[1:] - locs[0]
    length = np.linalg.norm(diff, axis=1)
    if np.any(length == 0):
        raise DataError("antennas must be at distinct locations")
    unit = diff / length[:, None]
    if np.linalg.matrix_rank(unit, tol=1e-9) < 2:
        raise DataError("antenna baselines are collinear; 3-D direction is not identifiable")
    return unit, length


def _solve_unit_direction(B, cos, n_iter=100):
    """Batched Levenberg-Marquardt for ``B @ e = cos`` with ``|e| = 1``.

    Residual is ``[B e - cos, |e|^2 - 1]``; every packet starts from
    ``(1, 1, 1) / sqrt(3)`` so the sign ambiguity resolves toward +x+y+z.
    """
    T = cos.shape[0]
    e = np.full((T, 3), np.sqrt(1 / 3))
    mu = np.full(T, 1e-3)

    def resid(e):
        return np.concatenate([e @ B.T - cos, (np.sum(e * e, axis=1) - 1)[:, None]], axis=1)

    r = resid(e)
    cost = np.sum(r * r, axis=1)
    eye = np.eye(3)
    for _ in range(n_iter):
        J = np.concatenate([np.broadcast_to(B, (T,) + B.shape), 2 * e[:, None, :]], axis=1)
        JtJ = np.einsum("tki,tkj->tij", J, J)
        g = np.einsum("tki,tk->ti", J, r)
        step = -np.linalg.solve(JtJ + mu[:, None, None] * eye, g[..., None])[..., 0]
        trial = e + step
        rt = resid(trial)
        ct = np.sum(rt * rt, axis=1)
        ok = ct < cost
        e = np.where(ok[:, None], trial, e)
        r = np.where(ok[:, None], rt, r)
        cost = np.where(ok, ct, cost)
        mu = np.where(ok, mu / 3, mu * 2)
        if np.all(np.abs(step).max(axis=1) < 1e-13) or np.all(cost < 1e-28):
            break
    return e


def naive_aoa(csi, cfg: ChannelConfig, rco=None, antenna_locations=None) -> np.ndarray:
    """Single-path 3-D arrival direction per packet, shape ``(3, T)``.

    Inter-antenna phase differences (less the radio-chain offset ``rco``) are
    wrapped to (-pi, pi], turned into direction cosines along each baseline,
    averaged over subcarriers and HT-LTFs, and solved for a unit vector.
    Only meaningful for a single dominant path, and unambiguous only while
    each baseline's phase difference stays within (-pi, pi]: for baselines
    about one wavelength long that means direction cosines below 0.5.
    """
    H = as_tensor(csi)
    locs = cfg.antenna_locations if antenna_locations is None else antenna_locations
    B, length = _baselines(locs)
    A = H.shape[2]
    if A != B.shape[0] + 1:
        raise DataError(f"tensor has {A} antennas, geometry has {B.shape[0] + 1}")
    rco = np.zeros(A) if rco is None else np.asarray(rco, dtype=float).ravel()
    if rco.size != A:
        raise DataError(f"rco has {rco.size} entries for {A} antennas")
    phase = np.unwrap(np.angle(H), axis=1)
    diff = phase[:, :, 1:, :] - phase[:, :, :1, :] - rco[None, None, 1:, None]
    diff = wrap_phase(np.unwrap(diff, axis=1))
    lam = cfg.wavelengths[None, :, None, None]
    cos = lam * diff / (2 * np.pi * length[None, None, :, None])
    cos_mean = cos.mean(axis=(1, 3))  # [T, A-1]
    e = _solve_unit_direction(B, cos_mean)
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    return e.T


def angular_error_deg(truth, aoa) -> np.ndarray:
    """Angle in degrees between a unit vector ``truth`` and columns of ``aoa``."""
    truth = np.asarray(truth, dtype=float)
    truth = truth / np.linalg.norm(truth)
    return np.degrees(np.arccos(np.clip(truth @ aoa, -1.0, 1.0)))


# ---------------------------------------------------------------- MUSIC

@dataclass
class MusicSpectrum:
    grid: np.ndarray
    q_values: np.ndarray
    n_sources: int
    directions: np.ndarray
    noise_subspace: np.ndarray

    def peaks(self, n=None):
        """Grid values at the ``n`` highest local maxima (default ``n_sources``)."""
        n = self.n_sources if n is None else n
        q = self.q_values
        if q.size < 3:
            idx = np.argsort(q)[::-1]
        else:
            inner = np.flatnonzero((q[1:-1] > q[:-2]) & (q[1:-1] >= q[2:])) + 1
            edges = [i for i in (0, q.size - 1)
                     if q[i] > q[1 if i == 0 else q.size - 2]]
            idx = np.concatenate([inner, np.array(edges, dtype=int)])
            idx = idx[np.argsort(q[idx])[::-1]]
        return self.grid[idx[:n]]


def grid_directions(grid):
    """Angles in degrees -> unit vectors ``(sin t, cos t, 0)``; (G, 3) arrays pass through.

    The angle is measured in the x-y plane from the +y axis toward +x, so for
    a line array along x, 0 degrees is broadside.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 2 and grid.shape[1] == 3:
        return grid / np.linalg.norm(grid, axis=1, keepdims=True)
    t = np.radians(grid.ravel())
    return np.stack([np.sin(t), np.cos(t), np.zeros_like(t)], axis=1)


def steering_vectors(positions, wavelength, directions) -> np.ndarray:
    """``a[g, m] = exp(+2j*pi/lambda * (p_m - p_0) . e_g)``, shape ``(G, M)``.

    The sign matches :func:`csikit.sim.synth_ray_tracing`, where ``e`` points
    from the array toward the source.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim == 1:
        pos = np.stack([pos, np.zeros_like(pos), np.zeros_like(pos)], axis=1)
    rel = pos - pos[0]
    return np.exp(2j * np.pi / wavelength * (np.asarray(directions) @ rel.T))


def music_spectrum(snapshots, positions, wavelength, grid, n_sources) -> MusicSpectrum:
    """MUSIC pseudo-spectrum ``Q = 1 / (a^H E_N E_N^H a)`` over ``grid``.

    ``snapshots`` is ``M x K`` (antennas by snapshots); ``positions`` is
    ``(M, 3)`` meters, or ``(M,)`` x-coordinates of a line array.
    """
    X = np.asarray(snapshots, dtype=np.complex128)
    if X.ndim != 2:
        raise DataError("snapshots must be an M x K matrix")
    M, K = X.shape
    D = int(n_sources)
    if not (K >= M >= D + 1) or D < 0:
        raise DataError(f"need K >= M >= D + 1, got K={K}, M={M}, D={D}")
    S = X @ X.conj().T / K
    if not np.all(np.isfinite(S)) or not np.allclose(S, S.conj().T, rtol=1e-10, atol=1e-12 * np.abs(S).max()):
        raise NumericError("sample covariance is not a finite Hermitian matrix")
    _, vecs = np.linalg.eigh(S)
    En = vecs[:, : M - D]
    directions = grid_directions(grid)
    a = steering_vectors(positions, wavelength, directions)
    if a.shape[1] != M:
        raise DataError(f"geometry has {a.shape[1]} elements, snapshots have {M}")
    proj = a.conj() @ En  # [G, M-D]
    den = np.sum(np.abs(proj) ** 2, axis=1)
    q = 1.0 / np.maximum(den, np.finfo(float).tiny)
    grid = np.asarray(grid, dtype=float)
    return MusicSpectrum(grid, q, D, directions, En)


# ---------------------------------------------------------------- Doppler

def power_series(csi) -> np.ndarray:
    """Per-packet mean of ``|H|^2`` over subcarriers, antennas and LTFs."""
    H = as_tensor(csi)
    return np.mean((H * np.conj(H)).real, axis=(1, 2, 3))


def doppler_spectrogram(csi, cfg: ChannelConfig, window_len: int, window_type="gaussian",
                        nfft=None, boundary=None) -> Spectrogram:
    """STFT of the CSI power series; frequency axis ascending, zero centred."""
    p = power_series(csi)
    if window_len > p.size:
        raise DataError(f"window ({window_len}) longer than series ({p.size})")
    w = make_window(WindowSpec(window_type, window_len))
    f, t, Z = stft(p, cfg.sample_rate, w, nfft=nfft, boundary=boundary)
    return Spectrogram(np.fft.fftshift(Z, axes=0), np.fft.fftshift(f), t)


# ---------------------------------------------------------------- speed

@dataclass
class SpeedEstimate:
    v: float
    tau0: float
    acf: np.ndarray
    lags: np.ndarray


def power_acf(csi, max_lag_samples):
    """Normalised autocorrelation of per-series power, averaged over series.

    Each (subcarrier, antenna, ltf) power series is mean-removed and its
    unbiased autocovariance is normalised by the lag-0 value. Series with no
    variance are skipped; if every series is constant the result is all ones.
    """
    H = as_tensor(csi)
    T = H.shape[0]
    p = (np.abs(H) ** 2).reshape(T, -1)
    p = p - p.mean(axis=0)
    var = np.mean(p * p, axis=0)
    scale = np.mean(np.abs(H) ** 2) ** 2
    live = var > 1e-24 * max(scale, np.finfo(float).tiny)
    if not np.any(live):
        return np.ones(max_lag_samples + 1)
    p = p[:, live]
    n = 1 << (2 * T - 1).bit_length()
    spec = np.fft.rfft(p, n, axis=0)
    r = np.fft.irfft(np.abs(spec) ** 2, n, axis=0)[: max_lag_samples + 1]
    r /= (T - np.arange(max_lag_samples + 1))[:, None]
    return np.mean(r / r[0], axis=1)


def first_secondary_peak(rho):
    """Index of the first local maximum after the first local minimum, or None."""
    d = np.diff(rho)
    n = rho.size
    i_min = None
    for i in range(1, n - 1):
        if d[i - 1] <= 0 and d[i] > 0:
            i_min = i
            break
    if i_min is None:
        return None
    for i in range(i_min + 1, n - 1):
        if d[i - 1] >= 0 and d[i] < 0:
            return i
    return None


def speed_from_acf(rho, sample_rate, wavelength):
    """Match the first ACF secondary peak to that of sinc; returns ``(v, tau0)``."""
    i = first_secondary_peak(np.asarray(rho, dtype=float))
    if i is None:
        raise NoMotionDetected("ACF has no local minimum followed by a maximum within max_lag")
    tau0 = i / sample_rate
    return SINC_PEAK_X0 * wavelength / (2 * np.pi * tau0), tau0


def estimate_speed(csi, cfg: ChannelConfig, max_lag: float) -> SpeedEstimate:
    """Dominant scatterer speed from the power ACF, ``v = x0 * lambda / (2 pi tau0)``."""
    H = as_tensor(csi)
    T = H.shape[0]
    fs = cfg.sample_rate
    if T / fs < 2 * max_lag:
        raise DataError(f"capture of {T / fs:.3g} s is shorter than 2 * max_lag")
    L = int(round(max_lag * fs))
    if L < 3:
        raise DataError("max_lag covers fewer than 3 samples")
    rho = power_acf(H, L)
    lam = float(np.mean(cfg.wavelengths))
    v, tau0 = speed_from_acf(rho, fs, lam)
    return SpeedEstimate(v, tau0, rho, np.arange(L + 1) / fs)
