"""Synthetic CSI: ray-tracing multipath, rich-scattering scenes, hardware errors.

The simulator is the oracle for the feature and sanitization tests, so it is
written directly from the channel equations with no shared code paths.

Phase conventions: a path with delay ``tau`` contributes
``alpha * exp(-2j*pi*f*tau)``. An antenna displaced by ``r`` from the origin
sees a path arriving from unit direction ``e`` earlier by ``r.e / c``. The
phase-type hardware errors in :class:`ErrorModel` (nonlinear phase template,
radio-chain offset, carrier frequency offset) are offsets *added to the
measured CSI angle*; the timing offset acts as an extra delay.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .core import ChannelConfig, as_tensor
from .errors import ConfigError, DataError

#: spacing between consecutive HT-LTFs within one PPDU, seconds
LTF_INTERVAL = 4e-6


@dataclass(frozen=True)
class Path:
    alpha: complex
    tau: float
    doppler_rate: float = 0.0
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.tau < 0:
            raise DataError("path delay must be non-negative")
        if abs(self.alpha) == 0:
            raise DataError("path attenuation must be non-zero")
        e = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(e)
        if e.shape != (3,) or n == 0:
            raise DataError("path direction must be a non-zero 3-vector")
        object.__setattr__(self, "direction", tuple(e / n))


@dataclass(frozen=True)
class MultipathChannel:
    paths: tuple

    def __post_init__(self):
        paths = tuple(p if isinstance(p, Path) else Path(**p) for p in self.paths)
        if not paths:
            raise DataError("a multipath channel needs at least one path")
        object.__setattr__(self, "paths", paths)

    @classmethod
    def single(cls, distance, alpha=1.0, direction=(0, 0, 1), doppler_rate=0.0,
               speed_of_light=299792458.0):
        return cls((Path(alpha, distance / speed_of_light, doppler_rate, direction),))

    @classmethod
    def from_dict(cls, d):
        paths = []
        for p in d["paths"]:
            p = dict(p)
            a = p.pop("alpha", 1.0)
            if isinstance(a, (list, tuple)):
                a = complex(a[0], a[1])
            if "distance" in p:
                p["tau"] = p.pop("distance") / d.get("speed_of_light", 299792458.0)
            paths.append(Path(alpha=complex(a), **p))
        return cls(tuple(paths))


@dataclass(frozen=True)
class Scatterer:
    speed: float
    power: float = 1.0
    count: int = 500

    def __post_init__(self):
        if self.speed < 0 or self.power < 0 or self.count < 1:
            raise DataError("scatterer needs speed >= 0, power >= 0, count >= 1")


@dataclass(frozen=True)
class ScatterScene:
    static_power: float = 1.0
    dynamic_scatterers: tuple = ()
    noise_sigma: float = 0.0

    def __post_init__(self):
        scat = tuple(s if isinstance(s, Scatterer) else Scatterer(**s)
                     for s in self.dynamic_scatterers)
        if self.static_power < 0 or self.noise_sigma < 0:
            raise DataError("static_power and noise_sigma must be non-negative")
        object.__setattr__(self, "dynamic_scatterers", scat)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["dynamic_scatterers"] = tuple(Scatterer(**s) for s in d.get("dynamic_scatterers", ()))
        d.pop("duration", None)
        return cls(**d)


@dataclass(frozen=True)
class SpeedTruth:
    v: float


def synth_ray_tracing(channel: MultipathChannel, cfg: ChannelConfig, n_packets: int,
                      n_ltf: int = 1) -> np.ndarray:
    """Noise-free CSI of a multipath channel, shape ``(n_packets, S, A, n_ltf)``.

    Each path's delay grows by ``doppler_rate / (c * fs)`` per packet.
    """
    if n_packets < 1 or n_ltf < 1:
        raise DataError("n_packets and n_ltf must be >= 1")
    f = cfg.subcarrier_freqs
    c = cfg.speed_of_light
    i = np.arange(n_packets)
    H = np.zeros((n_packets, f.size, cfg.n_antennas), dtype=np.complex128)
    for p in channel.paths:
        geom = -(cfg.antenna_locations @ np.asarray(p.direction)) / c  # [A]
        tau = p.tau + i * p.doppler_rate / (c * cfg.sample_rate)  # [T]
        total = tau[:, None, None] + geom[None, None, :]  # [T, 1, A]
        H += p.alpha * np.exp(-2j * np.pi * f[None, :, None] * total)
    return np.repeat(H[..., None], n_ltf, axis=3)


def synth_scattering(scene: ScatterScene, cfg: ChannelConfig, n_packets: int, seed: int):
    """Rich-scattering CSI; returns ``(tensor, SpeedTruth)``.

    Every dynamic scatterer diffuses into ``count`` directions drawn uniformly
    on the sphere (so ``cos(alpha)`` is uniform on [-1, 1]); each direction
    has an independent circular Gaussian gain per subcarrier and antenna with
    total variance ``power``. The static part is a constant of power
    ``static_power`` with random phase per subcarrier and antenna.
    """
    if n_packets < 1:
        raise DataError("n_packets must be >= 1")
    k = cfg.wavenumbers
    fs = cfg.sample_rate
    vmax = max((s.speed for s in scene.dynamic_scatterers), default=0.0)
    if k.max() * vmax / fs >= np.pi:
        raise DataError(
            f"sample rate {fs} Hz aliases speed {vmax} m/s (need k*v/fs < pi)")
    rng = np.random.default_rng(seed)
    S, A = cfg.n_subcarriers, cfg.n_antennas
    H = np.zeros((S, A, n_packets), dtype=np.complex128)
    for s in scene.dynamic_scatterers:
        cos_a = rng.uniform(-1.0, 1.0, s.count)
        gains = rng.standard_normal((S, A, s.count)) + 1j * rng.standard_normal((S, A, s.count))
        gains *= np.sqrt(s.power / (2 * s.count))
        omega = np.outer(k, s.speed * cos_a)  # [S, D] rad/s
        H += _accel.scatter_sum(gains, omega, n_packets, fs)
    static_phase = rng.uniform(-np.pi, np.pi, (S, A))
    H += np.sqrt(scene.static_power) * np.exp(1j * static_phase)[:, :, None]
    if scene.noise_sigma > 0:
        H += scene.noise_sigma / np.sqrt(2) * (
            rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
    tensor = np.ascontiguousarray(H.transpose(2, 0, 1))[..., None]
    if scene.dynamic_scatterers:
        powers = np.array([s.power for s in scene.dynamic_scatterers])
        speeds = np.array([s.speed for s in scene.dynamic_scatterers])
        v = float(speeds[np.argmax(powers)])
    else:
        v = 0.0
    return tensor, SpeedTruth(v)


# ---------------------------------------------------------------- errors

def m_shaped_template(n_subcarriers, depth=0.3):
    """Amplitude gain with an M-shaped frequency response, mean 1."""
    x = np.linspace(-1, 1, n_subcarriers)
    g = 1 + depth * (np.exp(-((x - 0.5) / 0.25) ** 2) + np.exp(-((x + 0.5) / 0.25) ** 2)) \
        - 0.6 * depth * x ** 4
    return g / g.mean()


def s_shaped_phase(n_subcarriers, linear_interval, amplitude=0.4):
    """Phase distortion that is zero on ``linear_interval`` and bends outside it."""
    idx = np.arange(n_subcarriers)
    lin = np.asarray(linear_interval)
    lo, hi = lin.min(), lin.max()
    g = np.zeros(n_subcarriers)
    left = idx < lo
    right = idx > hi
    g[left] = amplitude * ((lo - idx[left]) / max(lo, 1)) ** 2
    g[right] = -amplitude * ((idx[right] - hi) / max(n_subcarriers - 1 - hi, 1)) ** 2
    return g


@dataclass
class ErrorModel:
    """Hardware impairments applied by :func:`inject_errors`.

    ``None`` means "not present". ``sto`` gives explicit per-packet timing
    offsets in seconds; when it is ``None`` and ``sto_range > 0`` offsets are
    drawn i.i.d. uniform on ``[0, sto_range)`` from the call's seed.
    ``cfo`` is a frequency offset in Hz applied as a phase ramp over the
    packet time ``i / fs + l * 4 us``.
    """

    amp_template: np.ndarray | None = None
    phase_template: np.ndarray | None = None
    agc_gains: np.ndarray | None = None
    rco: np.ndarray | None = None
    cfo: float = 0.0
    sto: np.ndarray | None = None
    sto_range: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("amp_template", "phase_template", "agc_gains", "rco", "sto"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).ravel())
        if self.amp_template is not None and np.any(self.amp_template <= 0):
            raise DataError("amp_template must be strictly positive")
        if self.agc_gains is not None and np.any(self.agc_gains <= 0):
            raise DataError("agc_gains must be strictly positive")
        if self.rco is not None and self.rco.size and self.rco[0] != 0:
            raise DataError("rco[0] must be 0 (antenna 0 is the phase reference)")
        if self.noise_sigma < 0 or self.sto_range < 0:
            raise DataError("noise_sigma and sto_range must be non-negative")

    @classmethod
    def from_dict(cls, d, n_subcarriers=None, linear_interval=range(19, 38)):
        """JSON form; ``"amp_template": "m_shape"`` / ``"phase_template": "s_shape"``
        select the built-in shapes."""
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown error-model keys: {sorted(unknown)}")
        if d.get("amp_template") == "m_shape":
            if n_subcarriers is None:
                raise ConfigError("m_shape template needs the subcarrier count")
            d["amp_template"] = m_shaped_template(n_subcarriers)
        if d.get("phase_template") == "s_shape":
            if n_subcarriers is None:
                raise ConfigError("s_shape template needs the subcarrier count")
            d["phase_template"] = s_shaped_phase(n_subcarriers, linear_interval)
        return cls(**d)


def inject_errors(csi, errors: ErrorModel, cfg: ChannelConfig, seed: int = 0) -> np.ndarray:
    """Apply the composite hardware error model to a clean tensor.

    Per sample ``(i, j, k, l)`` the output is::

        beta_i * amp_j * exp(1j * (g_j + rco_k + 2*pi*cfo*t_il - 2*pi*f_j*sto_i)) * H
        + noise

    with ``t_il = i / fs + l * 4e-6``. Noise is circular complex Gaussian with
    ``E|n|^2 = noise_sigma**2``, added last.
    """
    H = as_tensor(csi)
    T, S, A, L = H.shape
    e = errors
    rng = np.random.default_rng(seed)

    def check(name, v, n):
        if v is not None and v.size != n:
            raise DataError(f"{name} has length {v.size}, expected {n}")

    check("amp_template", e.amp_template, S)
    check("phase_template", e.phase_template, S)
    check("agc_gains", e.agc_gains, T)
    check("rco", e.rco, A)
    check("sto", e.sto, T)
    if S != cfg.n_subcarriers:
        raise DataError(f"tensor has {S} subcarriers, config has {cfg.n_subcarriers}")

    out = H.copy()
    phase = np.zeros((T, S, A, L))
    touched = False
    if e.amp_template is not None:
        out = out * e.amp_template[None, :, None, None]
    if e.agc_gains is not None:
        out = out * e.agc_gains[:, None, None, None]
    if e.phase_template is not None:
        phase += e.phase_template[None, :, None, None]
        touched = True
    if e.rco is not None:
        phase += e.rco[None, None, :, None]
        touched = True
    if e.cfo:
        t = np.arange(T)[:, None] / cfg.sample_rate + np.arange(L)[None, :] * LTF_INTERVAL
        phase += (2 * np.pi * e.cfo * t)[:, None, None, :]
        touched = True
    sto = e.sto
    if sto is None and e.sto_range > 0:
        sto = rng.uniform(0.0, e.sto_range, T)
    if sto is not None:
        phase -= (2 * np.pi * np.outer(sto, cfg.subcarrier_freqs))[:, :, None, None]
        touched = True
    if touched:
        out = out * np.exp(1j * phase)
    if e.noise_sigma > 0:
        out = out + e.noise_sigma / np.sqrt(2) * (
            rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


def add_awgn(csi, snr_db, seed=0, signal_power=None):
    """Circular Gaussian noise at ``snr_db`` relative to the mean sample power."""
    H = as_tensor(csi)
    p = np.mean(np.abs(H) ** 2) if signal_power is None else signal_power
    sigma = np.sqrt(p / 10 ** (snr_db / 10))
    rng = np.random.default_rng(seed)
    return H + sigma / np.sqrt(2) * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))


def load_json(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
