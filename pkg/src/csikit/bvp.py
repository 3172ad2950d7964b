"""Body-coordinate velocity profile (BVP) from multi-link Doppler spectra.

Each link maps a velocity ``v`` around the person (the origin) to the Doppler
frequency ``a_x v_x + a_y v_y``. The BVP is recovered by greedy forward
selection that minimises the summed 1-D earth mover's distance between the
projected BVP and every link's measured spectrum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _accel
from .errors import DataError


@dataclass(frozen=True)
class LinkGeometry:
    tx: tuple
    rx: tuple
    wavelength: float

    def __post_init__(self):
        tx = np.asarray(self.tx, dtype=float)
        rx = np.asarray(self.rx, dtype=float)
        if tx.shape != (2,) or rx.shape != (2,):
            raise DataError("tx and rx must be 2-vectors")
        if np.linalg.norm(tx) == 0 or np.linalg.norm(rx) == 0:
            raise DataError("transceivers cannot sit at the person's location")
        if self.wavelength <= 0:
            raise DataError("wavelength must be positive")
        object.__setattr__(self, "tx", tuple(tx))
        object.__setattr__(self, "rx", tuple(rx))


@dataclass(frozen=True)
class VelocityGrid:
    n_bins_per_axis: int = 21
    v_max: float = 2.0

    def __post_init__(self):
        if self.n_bins_per_axis < 1 or self.n_bins_per_axis % 2 == 0:
            raise DataError("velocity grid needs an odd number of bins per axis")
        if self.v_max <= 0:
            raise DataError("v_max must be positive")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(-self.v_max, self.v_max, self.n_bins_per_axis)

    @property
    def velocities(self) -> np.ndarray:
        """``(N*N, 2)`` velocities; flat index ``k = ix * N + iy``."""
        c = self.centers
        vx, vy = np.meshgrid(c, c, indexing="ij")
        return np.stack([vx.ravel(), vy.ravel()], axis=1)

    @property
    def zero_index(self) -> int:
        h = self.n_bins_per_axis // 2
        return h * self.n_bins_per_axis + h


@dataclass
class AssignmentMatrix:
    matrix: np.ndarray  # [F, N*N], 0/1
    freq_axis: np.ndarray
    rows: np.ndarray  # [N*N], frequency row per velocity, -1 if outside


@dataclass
class Bvp:
    velocity: np.ndarray  # [N, N], index [ix, iy]
    eta: float
    scale_factors: np.ndarray
    objective: float
    support: list = field(default_factory=list)


def link_coefficients(g: LinkGeometry):
    """``(a_x, a_y)`` in 1/m: Doppler Hz per m/s of velocity along x and y."""
    tx = np.asarray(g.tx)
    rx = np.asarray(g.rx)
    nt, nr = np.linalg.norm(tx), np.linalg.norm(rx)
    if nt == 0 or nr == 0:
        raise DataError("zero-norm link endpoint")
    a = (tx / nt + rx / nr) / g.wavelength
    return float(a[0]), float(a[1])


def doppler_frequency(g: LinkGeometry, velocity):
    ax, ay = link_coefficients(g)
    v = np.asarray(velocity, dtype=float)
    return ax * v[..., 0] + ay * v[..., 1]


def _check_axis(freq_axis):
    f = np.asarray(freq_axis, dtype=float)
    if f.size < 2:
        raise DataError("frequency axis needs at least 2 bins")
    df = np.diff(f)
    if np.any(df <= 0) or not np.allclose(df, df[0], rtol=1e-6, atol=0):
        raise DataError("frequency axis must be uniform and increasing")
    return f, float(df[0])


def assignment_matrix(g: LinkGeometry, freq_axis, grid: VelocityGrid) -> AssignmentMatrix:
    """Map every grid velocity to its nearest Doppler bin on ``freq_axis``."""
    f, df = _check_axis(freq_axis)
    fv = doppler_frequency(g, grid.velocities)
    rows = np.rint((fv - f[0]) / df).astype(np.int64)
    rows[(rows < 0) | (rows >= f.size)] = -1
    A = np.zeros((f.size, rows.size))
    k = np.flatnonzero(rows >= 0)
    A[rows[k], k] = 1.0
    return AssignmentMatrix(A, f, rows)


def emd_1d(p, q) -> float:
    """Exact 1-D EMD with unit distance between adjacent bins.

    Both inputs are normalised to unit mass first, so scale does not matter.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.size != q.size:
        raise DataError(f"length mismatch: {p.size} vs {q.size}")
    if np.any(p < 0) or np.any(q < 0):
        raise DataError("EMD inputs must be non-negative")
    sp, sq = p.sum(), q.sum()
    if sp <= 0 or sq <= 0:
        raise DataError("EMD of an all-zero distribution is undefined")
    return float(np.abs(np.cumsum(p / sp) - np.cumsum(q / sq))[:-1].sum())


class _Objective:
    """Summed EMD across links for a sparse BVP, evaluated incrementally."""

    def __init__(self, dfs, rows):
        self.M, self.F = dfs.shape
        self.rows = rows  # [M, K]
        self.target_cdf = np.cumsum(dfs / dfs.sum(axis=1, keepdims=True), axis=1)
        self.penalty = float(self.F - 1)

    def model_cdf(self, support, amps):
        hist = np.zeros((self.M, self.F))
        for k, a in zip(support, amps):
            r = self.rows[:, k]
            ok = r >= 0
            hist[np.flatnonzero(ok), r[ok]] += a
        return np.cumsum(hist, axis=1), hist.sum(axis=1)

    def total(self, support, amps):
        cdf, mass = self.model_cdf(support, amps)
        return float(_accel.emd_scores(cdf, mass, self.target_cdf, np.full((self.M, 1), -1),
                                       np.zeros(1), self.penalty)[0, 0])

    def scores(self, support, amps, candidates, trial_amps):
        cdf, mass = self.model_cdf(support, amps)
        return _accel.emd_scores(cdf, mass, self.target_cdf, self.rows[:, candidates],
                                 trial_amps, self.penalty)


def estimate_bvp(dfs, links, grid: VelocityGrid, freq_axis, eta=1e-3, k_max=5,
                 guard_hz=0.0, n_refine=4, amp_ratios=None) -> Bvp:
    """Greedy sparse BVP for one time frame.

    ``dfs`` holds M non-negative spectra sampled on ``freq_axis``. Starting
    from an empty support, each round tries every unused grid bin with a
    line search over its amplitude and keeps the best; rounds stop once the
    objective improves by less than ``eta`` or ``k_max`` bins are in use.
    Ties (within 1e-9 relative) go to the lowest flat bin index.

    Rows within ``guard_hz`` of 0 Hz are zeroed in both the spectra and the
    assignment, which removes static reflections.
    """
    dfs = np.asarray(dfs, dtype=float)
    if dfs.ndim != 2:
        raise DataError("dfs must be an M x F array")
    M, F = dfs.shape
    if len(links) != M:
        raise DataError(f"{M} spectra but {len(links)} links")
    if M < 2:
        raise DataError("BVP estimation needs at least 2 links")
    f, _ = _check_axis(freq_axis)
    if f.size != F:
        raise DataError(f"spectra have {F} bins, frequency axis has {f.size}")
    if np.any(dfs < 0) or np.any(~np.isfinite(dfs)):
        raise DataError("spectra must be finite and non-negative")
    dfs = dfs.copy()
    guard = np.abs(f) <= guard_hz if guard_hz > 0 else np.zeros(F, dtype=bool)
    dfs[:, guard] = 0.0
    if np.any(dfs.sum(axis=1) <= 0):
        raise DataError("every link needs some spectral energy outside the guard band")

    rows = np.stack([assignment_matrix(g, f, grid).rows for g in links])
    if guard.any():
        rows[np.isin(rows, np.flatnonzero(guard))] = -1
    obj = _Objective(dfs, rows)
    K = rows.shape[1]
    ratios = np.logspace(-2, 2, 41) if amp_ratios is None else np.asarray(amp_ratios)

    support, amps = [], []
    best = obj.total(support, amps)
    while len(support) < k_max:
        cand = np.setdiff1d(np.arange(K), support)
        if not support:
            trial = np.ones(1)
            sc = obj.scores(support, amps, cand, trial)[:, 0]
            pick = _argmin_tiebreak(sc, cand)
            new_score, new_amp = sc[pick], 1.0
        else:
            scale = float(np.sum(amps))
            trial = ratios * scale
            sc = obj.scores(support, amps, cand, trial)
            coarse = sc.min(axis=1)
            order = np.lexsort((cand, coarse))[:n_refine]
            refined = []
            for i in order:
                amp, val = _line_search(obj, support, amps, cand[i], sc[i], trial)
                refined.append((val, cand[i], amp, i))
            vals = np.array([r[0] for r in refined])
            idxs = np.array([r[1] for r in refined])
            j = _argmin_tiebreak(vals, idxs)
            new_score, new_amp, pick = refined[j][0], refined[j][2], refined[j][3]
        if best - new_score < eta:
            break
        support.append(int(cand[pick]))
        amps.append(float(new_amp))
        best = float(new_score)

    N = grid.n_bins_per_axis
    V = np.zeros(N * N)
    V[support] = amps
    model = np.zeros((M, F))
    for i in range(M):
        ok = rows[i] >= 0
        np.add.at(model[i], rows[i][ok], V[ok])
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(model.sum(axis=1) > 0, dfs.sum(axis=1) / model.sum(axis=1), 0.0)
    return Bvp(V.reshape(N, N), eta, scale, best, support)


def _argmin_tiebreak(values, indices, rtol=1e-9):
    values = np.asarray(values)
    lo = values.min()
    tied = np.flatnonzero(values <= lo + rtol * max(abs(lo), 1e-12))
    return int(tied[np.argmin(np.asarray(indices)[tied])])


def _line_search(obj, support, amps, k, coarse_scores, trial):
    """Refine the amplitude of candidate ``k`` around its best coarse value."""
    i = int(np.argmin(coarse_scores))
    lo = np.log(trial[max(i - 1, 0)])
    hi = np.log(trial[min(i + 1, trial.size - 1)])
    if hi <= lo:
        return float(trial[i]), float(coarse_scores[i])

    def f(log_a):
        return obj.scores(support, amps, np.array([k]), np.array([np.exp(log_a)]))[0, 0]

    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if res.fun < coarse_scores[i]:
        return float(np.exp(res.x)), float(res.fun)
    return float(trial[i]), float(coarse_scores[i])


def synth_dfs(V, links, grid: VelocityGrid, freq_axis, scales=None):
    """Forward model ``D_i = c_i A_i V`` for a BVP ``V`` of shape (N, N)."""
    V = np.asarray(V, dtype=float).ravel()
    out = []
    for i, g in enumerate(links):
        A = assignment_matrix(g, freq_axis, grid).matrix
        c = 1.0 if scales is None else scales[i]
        out.append(c * A @ V)
    return np.array(out)
