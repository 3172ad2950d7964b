"""Hardware-error cancellation for CSI tensors.

Each function takes and returns ``(T, S, A, L)`` arrays. Where an estimate is
produced instead (RCO, CFO) the result is a plain array.
"""
from __future__ import annotations

import logging

import numpy as np

from .core import as_tensor, wrap_phase
from .errors import DataError

log = logging.getLogger(__name__)

#: HT-LTF spacing fixed by 802.11, seconds
LTF_INTERVAL = 4e-6

DEFAULT_LINEAR_INTERVAL = range(19, 38)


def _interval(linear_interval, S):
    if isinstance(linear_interval, slice):
        idx = np.arange(S)[linear_interval]
    else:
        idx = np.asarray(list(linear_interval), dtype=int)
    if idx.size < 2:
        raise DataError("linear_interval needs at least 2 subcarriers for a line fit")
    if idx.min() < 0 or idx.max() >= S:
        raise DataError(f"linear_interval must lie within [0, {S})")
    return idx


def set_template(csi_calib, linear_interval=DEFAULT_LINEAR_INTERVAL) -> np.ndarray:
    """Nonlinear amplitude/phase template from a cabled capture.

    Returns a complex array of shape ``(1, S, A, L)``: amplitude normalised by
    its subcarrier mean and averaged over packets, times ``exp(1j * phase)``
    where ``phase`` is the packet-averaged residual of the subcarrier-unwrapped
    phase after a line fit over ``linear_interval`` (and exactly 0 there).
    """
    H = as_tensor(csi_calib)
    T, S, A, L = H.shape
    idx = _interval(linear_interval, S)
    amp = np.abs(H)
    amp_template = np.mean(amp / amp.mean(axis=1, keepdims=True), axis=0, keepdims=True)

    phase = np.unwrap(np.angle(H), axis=1)
    # line fit per (packet, antenna, ltf) over the interval, vectorised
    x = idx.astype(float)
    y = phase[:, idx]  # [T, n, A, L]
    xm = x.mean()
    ym = y.mean(axis=1, keepdims=True)
    slope = np.sum((x - xm)[None, :, None, None] * (y - ym), axis=1, keepdims=True) / np.sum((x - xm) ** 2)
    intercept = ym - slope * xm
    fit = intercept + slope * np.arange(S)[None, :, None, None]
    phase_template = np.mean(phase - fit, axis=0, keepdims=True)
    phase_template[:, idx] = 0.0
    return amp_template * np.exp(1j * phase_template)


def nonlinear_calib(csi, template) -> np.ndarray:
    """Divide CSI (with subcarrier-unwrapped phase) by a calibration template."""
    H = as_tensor(csi)
    template = np.asarray(template, dtype=np.complex128)
    if template.ndim == 3:
        template = template[None]
    try:
        shape = np.broadcast_shapes(template.shape, H.shape)
    except ValueError:
        shape = None
    if shape != H.shape:
        raise DataError(f"template shape {template.shape} incompatible with {H.shape}")
    if np.any(np.abs(template) == 0):
        raise DataError("template amplitude is zero somewhere")
    unwrapped = np.abs(H) * np.exp(1j * np.unwrap(np.angle(H), axis=1))
    return unwrapped / template


def agc_calib(csi, gains) -> np.ndarray:
    """Divide packet ``i`` by its reported AGC gain."""
    H = as_tensor(csi)
    gains = np.asarray(gains, dtype=float).ravel()
    if gains.size != H.shape[0]:
        raise DataError(f"got {gains.size} gains for {H.shape[0]} packets")
    if np.any(~(gains > 0)):
        raise DataError("AGC gains must be positive")
    return H / gains[:, None, None, None]


def rco_calib(csi_calib) -> np.ndarray:
    """Per-antenna radio-chain phase offset relative to antenna 0.

    Phase is unwrapped along packets, then the first HT-LTF's phase
    difference to antenna 0 is wrapped to (-pi, pi] per sample and averaged
    over packets and subcarriers. Wrapping the difference before averaging
    keeps samples whose phases straddle the branch cut from biasing the mean.
    """
    H = as_tensor(csi_calib)
    phase = np.unwrap(np.angle(H[..., 0]), axis=0)  # [T, S, A]
    diff = wrap_phase(phase - phase[:, :, :1])
    est = diff.mean(axis=(0, 1))
    est[0] = 0.0
    return est


def cfo_calib(csi) -> np.ndarray:
    """Per-packet carrier frequency offset in Hz from the first two HT-LTFs.

    The LTF2 - LTF1 phase step is taken as ``angle(H2 * conj(H1))`` so it is
    wrap-safe, averaged over antennas and subcarriers, and divided by
    ``2*pi*4us``.
    """
    H = as_tensor(csi)
    if H.shape[3] < 2:
        raise DataError("CFO estimation needs at least 2 HT-LTFs per packet")
    step = np.angle(H[..., 1] * np.conj(H[..., 0]))  # [T, S, A]
    return step.mean(axis=(1, 2)) / (2 * np.pi * LTF_INTERVAL)


def _need_antennas(H):
    if H.shape[2] < 2:
        raise DataError("conjugate SFO/PDD removal needs at least 2 antennas")


def sto_calib_mul(csi) -> np.ndarray:
    """Antenna ``k`` times the conjugate of antenna ``(k+1) mod A``."""
    H = as_tensor(csi)
    _need_antennas(H)
    return H * np.conj(np.roll(H, -1, axis=2))


def sto_calib_div(csi, return_flagged=False):
    """Antenna ``k`` divided by antenna ``(k+1) mod A``.

    Samples whose divisor is exactly zero are set to 0; their flat indices
    (into the output) are logged and, with ``return_flagged``, returned.
    """
    H = as_tensor(csi)
    _need_antennas(H)
    nxt = np.roll(H, -1, axis=2)
    zero = nxt == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(zero, 0, H / np.where(zero, 1, nxt))
    flagged = np.flatnonzero(zero)
    if flagged.size:
        log.warning("sto_calib_div: %d zero-magnitude divisor samples set to 0", flagged.size)
    if return_flagged:
        return out, flagged
    return out


def naive_intrusion(csi, threshold=3.0, window=100):
    """Illustrative motion flag, not a validated detector.

    Computes per-subcarrier amplitude variance over non-overlapping windows of
    ``window`` packets; returns True when the largest window variance exceeds
    ``threshold`` times the median one.
    """
    H = as_tensor(csi)
    amp = np.abs(H).mean(axis=(2, 3))  # [T, S]
    n = amp.shape[0] // window
    if n < 2:
        return False
    v = amp[: n * window].reshape(n, window, -1).var(axis=1).mean(axis=1)
    med = np.median(v)
    if med == 0:
        return bool(v.max() > 0)
    return bool(v.max() > threshold * med)


SANITIZERS = {
    "nonlinear": nonlinear_calib,
    "agc": agc_calib,
    "sto_mul": sto_calib_mul,
    "sto_div": sto_calib_div,
}
