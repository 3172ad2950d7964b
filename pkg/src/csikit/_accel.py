"""Hot inner loops, compiled with numba when available.

Every kernel exists twice: a loop version (``*_loop``) that numba compiles,
and a vectorised numpy version (``*_numpy``). The public name dispatches to
the loop version when numba is importable and ``CSIKIT_DISABLE_NUMBA`` is not
set to a true value; otherwise to numpy. Both must agree to rounding error.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("CSIKIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = numba is not None and not _DISABLED


def _njit(fn):
    if numba is None or _DISABLED:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------- scattering

@_njit
def scatter_sum_loop(gains, omega, n_packets, sample_rate):
    S, A, D = gains.shape
    out = np.zeros((S, A, n_packets), dtype=np.complex128)
    phasor = np.empty(n_packets, dtype=np.complex128)
    for j in range(S):
        for d in range(D):
            step = np.exp(-1j * omega[j, d] / sample_rate)
            p = 1.0 + 0.0j
            for t in range(n_packets):
                phasor[t] = p
                p = p * step
            for a in range(A):
                g = gains[j, a, d]
                for t in range(n_packets):
                    out[j, a, t] += g * phasor[t]
    return out


def scatter_sum_numpy(gains, omega, n_packets, sample_rate):
    t = np.arange(n_packets) / sample_rate
    S, A, _ = gains.shape
    out = np.empty((S, A, n_packets), dtype=np.complex128)
    for j in range(S):
        out[j] = gains[j] @ np.exp(-1j * np.outer(omega[j], t))
    return out


def scatter_sum(gains, omega, n_packets, sample_rate):
    """Sum of rotating phasors: ``out[j, a, t] = sum_d g[j,a,d] exp(-i w[j,d] t/fs)``.

    Returns shape ``(S, A, n_packets)``.
    """
    gains = np.ascontiguousarray(gains, dtype=np.complex128)
    omega = np.ascontiguousarray(omega, dtype=np.float64)
    if USE_NUMBA:
        return scatter_sum_loop(gains, omega, int(n_packets), float(sample_rate))
    return scatter_sum_numpy(gains, omega, int(n_packets), float(sample_rate))


# ---------------------------------------------------------------- greedy EMD

@_njit
def emd_scores_loop(base_cdf, base_mass, target_cdf, bins, amps, empty_penalty):
    M, F = base_cdf.shape
    K = bins.shape[1]
    n_a = amps.shape[0]
    out = np.zeros((K, n_a))
    for k in range(K):
        for ia in range(n_a):
            a = amps[ia]
            total = 0.0
            for i in range(M):
                b = bins[i, k]
                add = a if b >= 0 else 0.0
                mass = base_mass[i] + add
                if mass <= 0.0:
                    total += empty_penalty
                    continue
                s = 0.0
                for j in range(F - 1):
                    c = base_cdf[i, j]
                    if b >= 0 and j >= b:
                        c += a
                    s += abs(c / mass - target_cdf[i, j])
                total += s
            out[k, ia] = total
    return out


def emd_scores_numpy(base_cdf, base_mass, target_cdf, bins, amps, empty_penalty):
    M, F = base_cdf.shape
    K = bins.shape[1]
    out = np.zeros((K, amps.size))
    j = np.arange(F - 1)
    for i in range(M):
        b = bins[i]
        valid = b >= 0
        step = (valid[:, None] & (j[None, :] >= b[:, None])).astype(float)  # [K, F-1]
        add = np.where(valid[:, None], amps[None, :], 0.0)  # [K, n_a]
        mass = base_mass[i] + add
        cdf = base_cdf[i, :-1][None, None, :] + add[:, :, None] * step[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.abs(cdf / mass[:, :, None] - target_cdf[i, :-1]).sum(axis=2)
        out += np.where(mass > 0, s, empty_penalty)
    return out


def emd_scores(base_cdf, base_mass, target_cdf, bins, amps, empty_penalty):
    """Total EMD across links for every (candidate bin, amplitude) pair.

    ``base_cdf[i]`` is the unnormalised cumulative mass of the current model
    on link ``i``, ``base_mass[i]`` its total, ``target_cdf[i]`` the
    normalised cumulative measured spectrum. ``bins[i, k]`` is the frequency
    row candidate ``k`` lands on for link ``i`` (``-1`` if outside the axis).
    A link whose model mass is zero contributes ``empty_penalty``.
    """
    args = (np.ascontiguousarray(base_cdf, dtype=np.float64),
            np.ascontiguousarray(base_mass, dtype=np.float64),
            np.ascontiguousarray(target_cdf, dtype=np.float64),
            np.ascontiguousarray(bins, dtype=np.int64),
            np.ascontiguousarray(amps, dtype=np.float64),
            float(empty_penalty))
    if USE_NUMBA:
        return emd_scores_loop(*args)
    return emd_scores_numpy(*args)
