import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from bvp_oracle import bin_rows, cdf_emd, exhaustive_optimum
from csikit.bvp import (LinkGeometry, VelocityGrid, _argmin_tiebreak, assignment_matrix,
                        doppler_frequency, emd_1d, estimate_bvp, link_coefficients, synth_dfs)
from csikit.errors import DataError

LAM = 299792458.0 / 5.825e9
FREQ = np.arange(-120.0, 121.0, 1.0)
LINKS6 = [((-1, -1), (1, -1)), ((-1, -1), (-1, 1)), ((1, 1), (1, -1)),
          ((2, 0.5), (-0.5, 2)), ((-2, 0.3), (0.4, -1.5)), ((1.5, -2), (-2, -0.7))]


def links(n=6, lam=LAM):
    return [LinkGeometry(tx, rx, lam) for tx, rx in LINKS6[:n]]


def test_link_coefficient_examples():
    assert link_coefficients(LinkGeometry((1, 0), (0, 1), 0.05)) == pytest.approx((20, 20))
    assert link_coefficients(LinkGeometry((-1, 0), (1, 0), 0.05))[0] == pytest.approx(0, abs=1e-12)
    with pytest.raises(DataError):
        LinkGeometry((0, 0), (1, 0), 0.05)


def path_length(tx, rx, p):
    return np.linalg.norm(np.asarray(tx) - p) + np.linalg.norm(np.asarray(rx) - p)


def test_doppler_matches_path_length_rate(rng):
    for _ in range(50):
        tx, rx = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        g = LinkGeometry(tuple(tx), tuple(rx), LAM)
        v = rng.uniform(-2, 2, 2)
        dt = 1e-6
        rate = (path_length(tx, rx, v * dt) - path_length(tx, rx, -v * dt)) / (2 * dt)
        want = -rate / LAM
        assert doppler_frequency(g, v) == pytest.approx(want, rel=1e-3, abs=1e-9)


def test_assignment_matrix():
    grid = VelocityGrid(21, 2.0)
    for g in links():
        am = assignment_matrix(g, FREQ, grid)
        assert am.matrix.shape == (FREQ.size, 441)
        assert np.all(am.matrix.sum(axis=0) <= 1)
        assert am.rows[grid.zero_index] == np.flatnonzero(FREQ == 0)[0]
    narrow = assignment_matrix(links()[0], np.arange(-5.0, 6.0), grid)
    far = np.argmax(np.abs(doppler_frequency(links()[0], grid.velocities)))
    assert narrow.matrix[:, far].sum() == 0 and narrow.rows[far] == -1
    with pytest.raises(DataError):
        assignment_matrix(links()[0], [0.0, 1.0, 3.0], grid)


def test_forward_model_one_hot():
    grid = VelocityGrid(21, 2.0)
    V = np.zeros((21, 21))
    V[15, 4] = 2.0
    D = synth_dfs(V, links(), grid, FREQ)
    for g, d in zip(links(), D):
        f = doppler_frequency(g, grid.velocities[15 * 21 + 4])
        j = int(np.argmin(np.abs(FREQ - f)))
        assert d[j] == 2.0 and d.sum() == 2.0


def test_emd_examples(rng):
    p = rng.random(30)
    assert emd_1d(p, p) == 0
    a, b = np.zeros(8), np.zeros(8)
    a[0], b[3] = 1, 1
    assert emd_1d(a, b) == pytest.approx(3.0)
    assert emd_1d(p, 2 * p) == pytest.approx(0, abs=1e-12)
    q = rng.random(30)
    x = np.arange(30)
    assert emd_1d(p, q) == pytest.approx(wasserstein_distance(x, x, p, q), rel=1e-9)
    assert cdf_emd(p, q) == pytest.approx(emd_1d(p, q))
    with pytest.raises(DataError):
        emd_1d(np.zeros(3), np.ones(3))
    with pytest.raises(DataError):
        emd_1d(np.ones(3), np.ones(4))


def test_single_component_three_links():
    grid = VelocityGrid(21, 2.0)
    V = np.zeros((21, 21))
    V[13, 6] = 1.0
    ls = links(3)
    res = estimate_bvp(synth_dfs(V, ls, grid, FREQ), ls, grid, FREQ)
    assert res.support == [13 * 21 + 6]
    assert res.objective < 1e-6
    assert np.all(res.velocity >= 0)


def test_two_components_six_links():
    grid = VelocityGrid(21, 2.0)
    V = np.zeros((21, 21))
    V[14, 7], V[5, 12] = 1.0, 0.6
    res = estimate_bvp(synth_dfs(V, links(), grid, FREQ), links(), grid, FREQ)
    found = sorted(divmod(k, 21) for k in res.support)
    assert len(found) == 2
    for (ix, iy), (tx, ty) in zip(found, [(5, 12), (14, 7)]):
        assert abs(ix - tx) <= 1 and abs(iy - ty) <= 1


def test_static_case():
    grid = VelocityGrid(21, 2.0)
    D = np.zeros((6, FREQ.size))
    D[:, FREQ == 0] = 1.0
    res = estimate_bvp(D, links(), grid, FREQ)
    assert res.support == [grid.zero_index]


def test_scaling_invariance():
    grid = VelocityGrid(21, 2.0)
    V = np.zeros((21, 21))
    V[14, 7], V[5, 12] = 1.0, 0.6
    D = synth_dfs(V, links(), grid, FREQ)
    base = estimate_bvp(D, links(), grid, FREQ).support
    scaled = estimate_bvp(D * np.array([3, 0.2, 1, 7, 0.5, 2.0])[:, None], links(), grid, FREQ).support
    assert sorted(base) == sorted(scaled)


def test_guard_band_removes_static():
    grid = VelocityGrid(21, 2.0)
    V = np.zeros((21, 21))
    V[16, 3] = 1.0
    D = synth_dfs(V, links(), grid, FREQ)
    D[:, FREQ == 0] += 5.0
    res = estimate_bvp(D, links(), grid, FREQ, guard_hz=0.5)
    assert res.support == [16 * 21 + 3]


def test_errors():
    grid = VelocityGrid(21, 2.0)
    D = np.ones((6, FREQ.size))
    with pytest.raises(DataError):
        estimate_bvp(D[:, :-1], links(), grid, FREQ)
    with pytest.raises(DataError):
        estimate_bvp(D[:1], links(1), grid, FREQ)
    with pytest.raises(DataError):
        estimate_bvp(-D, links(), grid, FREQ)
    with pytest.raises(DataError):
        VelocityGrid(20)


def test_tiebreak_lowest_index():
    assert _argmin_tiebreak(np.array([1.0, 0.5, 0.5]), np.array([9, 7, 3])) == 2


def random_instance(seed, N, n_comp):
    rng = np.random.default_rng(seed)
    grid = VelocityGrid(N, 2.0)
    V = np.zeros(N * N)
    while np.count_nonzero(V) < n_comp:
        k = rng.integers(N * N)
        ix, iy = divmod(int(k), N)
        ok = all(max(abs(ix - a), abs(iy - b)) >= 2 for a, b in (divmod(int(j), N) for j in np.flatnonzero(V)))
        if ok:
            V[k] = rng.uniform(0.3, 1.0)
    return grid, V.reshape(N, N)


@pytest.mark.parametrize("seed,n_comp", [(0, 1), (1, 2), (2, 2), (3, 2)])
def test_greedy_near_exhaustive(seed, n_comp):
    grid, V = random_instance(seed, 11, n_comp)
    ls = links()
    D = synth_dfs(V, ls, grid, FREQ)
    res = estimate_bvp(D, ls, grid, FREQ, k_max=2)
    rows = bin_rows([(l.tx, l.rx, l.wavelength) for l in ls], grid.velocities, FREQ)
    opt = exhaustive_optimum(D, rows, max_support=2)
    assert res.objective <= 1.05 * opt + 1e-6
