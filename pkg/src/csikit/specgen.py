"""Spectral-leakage forward model, synthetic leaked spectra and dataset prep.

The leaked spectrum of an ideal line spectrum ``s`` (row vector) is
``s @ B`` where row ``i`` of the blur matrix ``B`` is the cropped, centred,
max-normalised spectrum of a windowed complex carrier at integer frequency
``i - (crop_len - 1) / 2`` Hz.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError
from .spectral import Spectrogram, WindowSpec, make_window, stft

#: defaults of the reference leakage setup
WINDOW_LEN = 125
PADDED_LEN = 1000
CROP_LEN = 121
AWGN_AMP = 0.01
N_MAX_COMPONENTS = 3


@dataclass
class SpectrumTriple:
    ideal: np.ndarray
    blurred: np.ndarray
    noisy: np.ndarray


@dataclass
class LabeledSample:
    features: np.ndarray  # [T_MAX, RX, F, 1]
    label: np.ndarray
    domain: np.ndarray


def _crop_centre(spec, crop_len, axis):
    """Keep the first (c+1)/2 and last (c-1)/2 bins, then roll 0 Hz to the middle."""
    n_pos = (crop_len + 1) // 2
    n_neg = (crop_len - 1) // 2
    pos = np.take(spec, np.arange(n_pos), axis=axis)
    neg = np.take(spec, np.arange(spec.shape[axis] - n_neg, spec.shape[axis]), axis=axis)
    return np.roll(np.concatenate([pos, neg], axis=axis), n_neg, axis=axis)


def blur_matrix(spec: WindowSpec = WindowSpec("gaussian", WINDOW_LEN), padded_len=PADDED_LEN,
                crop_len=CROP_LEN, fs=1000) -> np.ndarray:
    """Window convolution matrix, ``crop_len x crop_len`` complex, one carrier per row."""
    W = spec.length
    if crop_len < 1 or crop_len % 2 == 0:
        raise DataError("crop_len must be a positive odd integer")
    if padded_len < W:
        raise DataError(f"padded_len ({padded_len}) must be >= window length ({W})")
    if crop_len > padded_len:
        raise DataError("crop_len cannot exceed padded_len")
    if fs <= 0:
        raise DataError("fs must be positive")
    half = crop_len // 2
    t = np.arange(W) / fs
    freqs = np.arange(-half, half + 1)
    carriers = np.exp(2j * np.pi * freqs[:, None] * t[None, :])
    spectra = np.fft.fft(carriers * make_window(spec), n=padded_len, axis=1)
    rows = _crop_centre(spectra, crop_len, axis=1)
    amp = np.abs(rows)
    return amp / amp.max(axis=1, keepdims=True) * np.exp(1j * np.angle(rows))


def synth_leaked(matrix, n_batch, n_max_components=N_MAX_COMPONENTS, noise_amp=AWGN_AMP,
                 seed=0) -> list:
    """Random ideal spectra with their leaked and noisy versions.

    Per sample the component count is drawn from ``{0, ..., n_max_components - 1}``,
    bins without replacement, amplitudes uniform on (0, 1] and phases uniform
    on (-pi, pi]. Noise per bin has amplitude ``2 * noise_amp * (u - 0.5)`` and
    a uniform phase. Sample ``i`` uses its own generator seeded with
    ``(seed, i)``, so batches can be split freely.
    """
    B = np.asarray(matrix)
    n = B.shape[0]
    if n_max_components > n:
        raise DataError("n_max_components cannot exceed the spectrum length")
    out = []
    for i in range(int(n_batch)):
        rng = np.random.default_rng([int(seed), i])
        s = np.zeros(n, dtype=np.complex128)
        k = int(rng.integers(0, n_max_components)) if n_max_components > 0 else 0
        idx = rng.permutation(n)[:k]
        s[idx] = (1 - rng.random(k)) * np.exp(1j * (np.pi - 2 * np.pi * rng.random(k)))
        blurred = s @ B
        noise = 2 * noise_amp * (rng.random(n) - 0.5) * np.exp(1j * (2 * np.pi * rng.random(n) - np.pi))
        out.append(SpectrumTriple(s, blurred, blurred + noise))
    return out


def enhance_ls(noisy, matrix, ridge=1e-3) -> np.ndarray:
    """Ridge deconvolution: ``argmin |noisy - B^T x|^2 + ridge |x|^2``.

    ``noisy`` may be one spectrum or a stack of rows. With ``ridge == 0`` a
    numerically singular system raises :class:`NumericError`.
    """
    B = np.asarray(matrix, dtype=np.complex128)
    y = np.asarray(noisy, dtype=np.complex128)
    n = B.shape[0]
    if B.shape != (n, n) or y.shape[-1] != n:
        raise DataError(f"dimension mismatch: matrix {B.shape}, spectrum {y.shape}")
    if ridge < 0:
        raise DataError("ridge must be non-negative")
    Mh = B.conj()  # (B^T)^H
    G = Mh @ B.T + ridge * np.eye(n)
    if ridge == 0 and np.linalg.cond(G) > 1 / np.finfo(float).eps:
        raise NumericError("normal equations are singular; use ridge > 0")
    rhs = Mh @ y.T if y.ndim > 1 else Mh @ y
    x = np.linalg.solve(G, rhs)
    return x.T if y.ndim > 1 else x


def pick_peaks(x, rel_threshold=0.2):
    """Indices of local maxima of ``|x|`` at or above ``rel_threshold * max|x|``."""
    m = np.abs(np.asarray(x))
    if m.max() == 0:
        return np.zeros(0, dtype=int)
    padded = np.concatenate([[-np.inf], m, [-np.inf]])
    is_max = (m >= padded[:-2]) & (m > padded[2:])
    return np.flatnonzero(is_max & (m >= rel_threshold * m.max()))


def support_f1(truths, estimates, rel_threshold=0.2):
    """Micro-averaged F1 of exact-bin support recovery over a batch."""
    tp = fp = fn = 0
    for s, x in zip(truths, estimates):
        true = set(np.flatnonzero(np.asarray(s) != 0).tolist())
        found = set(pick_peaks(x, rel_threshold).tolist())
        tp += len(true & found)
        fp += len(found - true)
        fn += len(true - found)
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def normalize_max(spec, axes):
    """Divide by the max magnitude over ``axes``; all-zero blocks stay zero."""
    mx = np.abs(spec).max(axis=axes, keepdims=True)
    return np.divide(spec, mx, out=np.zeros_like(spec), where=mx > 0)


def csi_to_cropped_spec(series, fs, spec: WindowSpec = WindowSpec("gaussian", WINDOW_LEN),
                        crop_len=CROP_LEN, nfft=None) -> Spectrogram:
    """Cropped, zero-centred, per-receiver max-normalised STFT.

    ``series`` is ``(RX, T)`` (or ``(T,)``), real or complex. The STFT uses
    zero-padded boundaries and ``nfft = fs`` by default, i.e. 1 Hz bins.
    """
    x = np.asarray(series)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] < spec.length:
        raise DataError(f"series of length {x.shape[-1]} shorter than window {spec.length}")
    nfft = int(round(fs)) if nfft is None else int(nfft)
    if crop_len % 2 == 0 or crop_len > nfft:
        raise DataError("crop_len must be odd and no larger than nfft")
    f, t, Z = stft(x, fs, make_window(spec), nfft=nfft, boundary="zeros")
    Z = _crop_centre(Z, crop_len, axis=1)
    freqs = _crop_centre(f, crop_len, axis=0)
    return Spectrogram(normalize_max(Z, axes=(1, 2)), freqs, t)


def onehot(labels, n_classes):
    labels = np.asarray(labels, dtype=int).ravel()
    if np.any(labels < 1) or np.any(labels > n_classes):
        raise DataError(f"labels must lie in 1..{n_classes}")
    return np.eye(n_classes)[labels - 1]


def snapshot_minmax(sample):
    """Scale each time step of a ``(RX, F, T)`` array to [0, 1]."""
    x = np.asarray(sample, dtype=float)
    lo = x.min(axis=(0, 1), keepdims=True)
    hi = x.max(axis=(0, 1), keepdims=True)
    return (x - lo) / (hi - lo + sys.float_info.min)


def prep_dataset(samples, labels, domains, n_classes=None, n_domains=None) -> list:
    """Normalise, left-pad to the longest duration and one-hot encode.

    ``samples`` are ``(RX, F, T_k)`` magnitude arrays; labels and domains are
    1-based integers.
    """
    if len(samples) == 0:
        raise DataError("prep_dataset needs at least one sample")
    if not (len(samples) == len(labels) == len(domains)):
        raise DataError("samples, labels and domains must have equal lengths")
    arrs = [np.abs(np.asarray(s)) for s in samples]
    shape = arrs[0].shape[:2]
    for a in arrs:
        if a.ndim != 3 or a.shape[:2] != shape:
            raise DataError("all samples need the same (RX, F) shape")
    t_max = max(a.shape[2] for a in arrs)
    n_classes = int(max(labels)) if n_classes is None else n_classes
    n_domains = int(max(domains)) if n_domains is None else n_domains
    lab = onehot(labels, n_classes)
    dom = onehot(domains, n_domains)
    out = []
    for a, l, d in zip(arrs, lab, dom):
        x = snapshot_minmax(a)
        x = np.pad(x, ((0, 0), (0, 0), (t_max - x.shape[2], 0)))
        x = np.transpose(x, (2, 0, 1))[..., None]
        out.append(LabeledSample(x, l, d))
    return out
