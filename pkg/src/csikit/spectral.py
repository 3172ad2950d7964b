"""Windows, STFT and the spectrogram container shared by features and specgen."""
from __future__ import annotations

from dataclasses import dataclass
from math import log, sqrt

import numpy as np
import scipy.signal

from .errors import DataError

WINDOW_KINDS = ("gaussian", "rect")


@dataclass(frozen=True)
class WindowSpec:
    """``kind`` is ``"gaussian"``, ``"rect"`` or any name scipy's get_window knows."""

    kind: str = "gaussian"
    length: int = 125

    def __post_init__(self):
        if int(self.length) < 1:
            raise DataError(f"window length must be >= 1, got {self.length}")
        object.__setattr__(self, "length", int(self.length))

    @property
    def sigma(self) -> float:
        """Gaussian std in samples; puts the endpoints at 1/200 of the peak."""
        return (self.length - 1) / sqrt(8 * log(200))


@dataclass
class Spectrogram:
    """Time-frequency matrix ``data[..., F_bins, T_bins]`` with its axes."""

    data: np.ndarray
    freq_axis: np.ndarray
    time_axis: np.ndarray

    def __post_init__(self):
        if self.data.shape[-2] != len(self.freq_axis) or self.data.shape[-1] != len(self.time_axis):
            raise DataError(
                f"spectrogram shape {self.data.shape} does not match axes "
                f"({len(self.freq_axis)}, {len(self.time_axis)})")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


def make_window(spec: WindowSpec) -> np.ndarray:
    """Symmetric window weights of length ``spec.length``."""
    W = spec.length
    if spec.kind == "gaussian":
        return scipy.signal.windows.gaussian(W, spec.sigma, sym=True)
    if spec.kind == "rect":
        return np.ones(W)
    try:
        return scipy.signal.get_window(spec.kind, W, fftbins=False)
    except ValueError as exc:
        raise DataError(f"unknown window {spec.kind!r}: {exc}") from None


def stft(x, fs, window, nfft=None, boundary="zeros"):
    """Stride-1 two-sided STFT along the last axis.

    Frequency bins come back in FFT order (0, positive, negative), values are
    scaled by ``1/sum(window)`` as in ``scipy.signal.stft``. With
    ``boundary=None`` only frames lying fully inside the series are kept.
    """
    window = np.asarray(window, dtype=float)
    W = window.size
    x = np.asarray(x)
    if x.shape[-1] < W:
        raise DataError(f"series of length {x.shape[-1]} is shorter than the window ({W})")
    nfft = W if nfft is None else int(nfft)
    if nfft < W:
        raise DataError(f"nfft ({nfft}) must be >= window length ({W})")
    f, t, Z = scipy.signal.stft(
        x, fs=fs, window=window, nperseg=W, noverlap=W - 1, nfft=nfft,
        detrend=False, return_onesided=False, boundary=boundary,
        padded=boundary is not None, axis=-1)
    return f, t, Z
