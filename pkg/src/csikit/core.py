"""CSI tensor model, channel configuration and CFR/CIR transforms.

A CSI tensor is a plain complex ``numpy`` array of shape ``(T, S, A, L)``:
packets, subcarriers, receive antennas and HT-LTFs per PPDU.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

SPEED_OF_LIGHT = 299792458.0

#: spacing of the L-shaped three-antenna array used by the default config
DEFAULT_ANTENNA_SPACING = 0.0514665


@dataclass(frozen=True)
class ChannelConfig:
    """Radio parameters shared by simulation and feature extraction.

    ``subcarrier_freqs`` is given explicitly rather than derived from
    ``bandwidth``; the default 57-tone grid spans 19.4 MHz while the delay
    scaling in :func:`csikit.features.naive_tof` uses the nominal 20 MHz.
    """

    bandwidth: float
    subcarrier_freqs: np.ndarray
    sample_rate: float
    antenna_locations: np.ndarray
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        freqs = np.asarray(self.subcarrier_freqs, dtype=float).ravel()
        locs = np.asarray(self.antenna_locations, dtype=float)
        if locs.ndim == 1:
            locs = locs.reshape(1, -1)
        object.__setattr__(self, "subcarrier_freqs", freqs)
        object.__setattr__(self, "antenna_locations", locs)
        if freqs.size == 0 or np.any(np.diff(freqs) <= 0):
            raise DataError("subcarrier_freqs must be non-empty and strictly increasing")
        if np.any(freqs <= 0):
            raise DataError("subcarrier frequencies must be positive")
        if locs.ndim != 2 or locs.shape[1] != 3 or locs.shape[0] < 1:
            raise DataError("antenna_locations must have shape (A, 3)")
        if np.any(locs[0] != 0):
            raise DataError("antenna_locations[0] must be the array origin")
        if self.bandwidth <= 0 or self.sample_rate <= 0 or self.speed_of_light <= 0:
            raise DataError("bandwidth, sample_rate and speed_of_light must be positive")

    @property
    def n_subcarriers(self) -> int:
        return self.subcarrier_freqs.size

    @property
    def n_antennas(self) -> int:
        return self.antenna_locations.shape[0]

    @property
    def wavelengths(self) -> np.ndarray:
        return self.speed_of_light / self.subcarrier_freqs

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi / self.wavelengths

    @property
    def center_frequency(self) -> float:
        return float(np.mean(self.subcarrier_freqs))

    @classmethod
    def default(cls, sample_rate=1000.0, **overrides) -> "ChannelConfig":
        """57 tones on 5.8153-5.8347 GHz, 20 MHz, L-shaped 3-antenna array."""
        d = DEFAULT_ANTENNA_SPACING
        params = dict(
            bandwidth=20e6,
            subcarrier_freqs=np.linspace(5.8153e9, 5.8347e9, 57),
            sample_rate=sample_rate,
            antenna_locations=np.array([[0, 0, 0], [d, 0, 0], [0, d, 0]], dtype=float),
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "subcarrier_freqs": self.subcarrier_freqs.tolist(),
            "sample_rate": self.sample_rate,
            "antenna_locations": self.antenna_locations.tolist(),
            "speed_of_light": self.speed_of_light,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "ChannelConfig":
        """Build from JSON. Missing keys fall back to :meth:`default`.

        ``subcarrier_freqs`` may be a list, or ``{"start", "stop", "num"}``.
        """
        d = dict(d or {})
        freqs = d.pop("subcarrier_freqs", None)
        if isinstance(freqs, dict):
            freqs = np.linspace(float(freqs["start"]), float(freqs["stop"]), int(freqs["num"]))
        if freqs is not None:
            d["subcarrier_freqs"] = np.asarray(freqs, dtype=float)
        if "antenna_locations" in d:
            d["antenna_locations"] = np.asarray(d["antenna_locations"], dtype=float)
        unknown = set(d) - {"bandwidth", "subcarrier_freqs", "sample_rate",
                            "antenna_locations", "speed_of_light"}
        if unknown:
            raise ConfigError(f"unknown channel keys: {sorted(unknown)}")
        return cls.default(**d)


@dataclass(frozen=True)
class CirTensor:
    """Delay-domain taps, shape ``(T, D_bins, A)``."""

    data: np.ndarray
    bin_duration: float

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


@dataclass
class ValidationReport:
    dim_mismatches: list = field(default_factory=list)
    nonfinite_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def ok(self) -> bool:
        return not self.dim_mismatches and self.nonfinite_indices.size == 0

    def __bool__(self):
        return self.ok


def validate_tensor(data, dims=None) -> ValidationReport:
    """Check shape and finiteness of a CSI tensor without modifying it.

    ``data`` may be a 4-D array, or any array together with ``dims=(T, S, A, L)``,
    which is how a flat payload from a file is checked. Non-finite samples are
    reported by their flat (row-major) index.
    """
    arr = np.asarray(data)
    report = ValidationReport()
    if dims is None:
        if arr.ndim != 4:
            report.dim_mismatches.append(f"expected 4 dimensions (T, S, A, L), got {arr.ndim}")
            dims = arr.shape
        else:
            dims = arr.shape
    else:
        dims = tuple(int(x) for x in dims)
        if len(dims) != 4:
            report.dim_mismatches.append(f"expected 4 dims, got {len(dims)}")
        expected = int(np.prod(dims)) if dims else 0
        if arr.size != expected:
            report.dim_mismatches.append(
                f"data length {arr.size} != T*S*A*L = {expected}")
        elif arr.ndim == 4 and arr.shape != dims:
            report.dim_mismatches.append(f"shape {arr.shape} != declared {dims}")
    for name, n in zip("TSAL", dims):
        if n < 1:
            report.dim_mismatches.append(f"{name} must be >= 1, got {n}")
    flat = arr.ravel()
    if flat.size:
        report.nonfinite_indices = np.flatnonzero(~np.isfinite(flat))
    return report


def as_tensor(data) -> np.ndarray:
    """Return ``data`` as a validated complex128 tensor or raise ``DataError``."""
    arr = np.asarray(data)
    if arr.ndim == 3:
        arr = arr[..., np.newaxis]
    report = validate_tensor(arr)
    if not report.ok:
        msg = "; ".join(report.dim_mismatches)
        if report.nonfinite_indices.size:
            msg = (msg + "; " if msg else "") + (
                f"{report.nonfinite_indices.size} non-finite samples, "
                f"first at flat index {int(report.nonfinite_indices[0])}")
        raise DataError(f"invalid CSI tensor: {msg}")
    return arr.astype(np.complex128, copy=False)


def cfr_to_cir(csi, bandwidth: float, ifft_len: int) -> CirTensor:
    """Inverse DFT along subcarriers, zero-padded to ``ifft_len``, L-averaged.

    The inverse transform carries the ``1/ifft_len`` factor (numpy convention),
    so ``np.fft.fft(cir, axis=1)[:, :S]`` reproduces the CFR when ``L == 1``.
    """
    csi = as_tensor(csi)
    S = csi.shape[1]
    ifft_len = int(ifft_len)
    if ifft_len < S:
        raise DataError(f"ifft_len ({ifft_len}) must be >= number of subcarriers ({S})")
    cir = np.fft.ifft(csi, n=ifft_len, axis=1).mean(axis=3)
    return CirTensor(cir, S / (ifft_len * bandwidth))


def unwrap_phase(series, axis=-1):
    """Remove 2*pi jumps so successive differences stay within pi."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise DataError("unwrap_phase needs a non-empty series")
    return np.unwrap(series, axis=axis)


def wrap_phase(x):
    """Map angles to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    return np.pi - np.mod(np.pi - x, 2 * np.pi)
