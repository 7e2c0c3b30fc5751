import numpy as np
import pytest

from needlekit import curvature as cv
from needlekit import isoperim as iso
from needlekit import mmspace as ms
from needlekit.errors import BadVolume, MeshTooCoarse


def test_model_profile_trivial_volumes():
    spec = iso.ModelProfileSpec(1.0, 2.0, np.pi)
    assert iso.model_profile(spec, 0.0) == 0.0
    assert iso.model_profile(spec, 1.0) == 0.0
    with pytest.raises(BadVolume):
        iso.model_profile(spec, 1.5)


def test_model_profile_spherical_half():
    # closed-form oracle: density sin(t)/2 on [0, pi], cap at pi/2, content 1/2
    val = iso.model_profile(iso.ModelProfileSpec(1.0, 2.0, np.pi), 0.5)
    assert val == pytest.approx(0.5, abs=1e-4)


def test_model_profile_spherical_quarter():
    # cap of mass 1/4: (1 - cos r)/2 = 1/4 -> r = pi/3, content sin(pi/3)/2
    val = iso.model_profile(iso.ModelProfileSpec(1.0, 2.0, np.pi), 0.25)
    assert val == pytest.approx(np.sin(np.pi / 3) / 2, abs=1e-4)


def test_model_profile_flat_brute_force():
    # brute-force oracle over 1e4 affine-family shifts
    spec = iso.ModelProfileSpec(0.0, 2.0, 1.0)
    val = iso.model_profile(spec, 0.5)
    grid = np.linspace(0.0, 1.0, 2049)
    best = np.inf
    for a in np.linspace(-np.pi / 2 + 1e-6, np.pi - 1e-6, 10000):
        J = np.cos(a) + np.sin(a) * grid
        h = np.clip(J, 0, None)
        cell = 0.5 * np.diff(grid) * (h[:-1] + h[1:])
        mass = cell.sum()
        if mass <= 0:
            continue
        cdf = np.concatenate([[0], np.cumsum(cell)]) / mass
        for target in (0.5,):
            k = np.searchsorted(cdf, target)
            if 0 < k < len(grid):
                lam = (target - cdf[k - 1]) / max(cdf[k] - cdf[k - 1], 1e-300)
                best = min(best, ((1 - lam) * h[k - 1] + lam * h[k]) / mass)
    assert val >= 1.0 - 1e-6          # uniform candidate gives exactly 1
    assert val == pytest.approx(best, abs=2e-3)


def test_model_profile_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(5):
        K = rng.uniform(-1, 1.5)
        N = rng.uniform(1.5, 5)
        D = rng.uniform(0.5, 2.5)
        if K > 0:
            D = min(D, np.pi * np.sqrt((N - 1) / K) * 0.95)
        v = rng.uniform(0.1, 0.9)
        spec = iso.ModelProfileSpec(K, N, D)
        assert iso.model_profile(spec, v) == pytest.approx(
            iso.model_profile(spec, 1 - v), rel=1e-4, abs=1e-6)


def test_model_profile_monotone_in_D():
    for v in (0.3, 0.5):
        vals = [iso.model_profile(iso.ModelProfileSpec(0.0, 3.0, D), v)
                for D in (0.5, 1.0, 2.0)]
        assert vals[0] >= vals[1] - 1e-9 and vals[1] >= vals[2] - 1e-9


def test_model_profile_unbounded():
    assert iso.model_profile(iso.ModelProfileSpec(-1.0, 2.0, np.inf), 0.5) == 0.0
    assert iso.model_profile(iso.ModelProfileSpec(0.0, 2.0, np.inf), 0.3) == 0.0


def test_model_profile_constant_n1():
    assert iso.model_profile(iso.ModelProfileSpec(0.0, 1.0, 2.0), 0.4) == pytest.approx(0.5)


def test_minkowski_uniform_interval():
    space, _ = ms.generate_interval_model(0.0, 2.0, 1.0, 1000)
    A = space.line_coord <= 0.5
    est = iso.minkowski_content(space, A, iso.default_eps_window(space))
    assert est.value == pytest.approx(1.0, rel=0.02)


def test_minkowski_sin_model():
    space, _ = ms.generate_interval_model(1.0, 2.0, np.pi, 1000)
    A = space.line_coord <= np.pi / 2
    est = iso.minkowski_content(space, A, iso.default_eps_window(space))
    assert est.value == pytest.approx(0.5, rel=0.02)


def test_minkowski_whole_space_and_empty():
    space, _ = ms.generate_interval_model(0.0, 2.0, 1.0, 500)
    eps = iso.default_eps_window(space)
    whole = iso.minkowski_content(space, np.ones(space.n, bool), eps)
    assert whole.value <= 1e-12                      # A^eps = A, regression noise only
    assert all(q == 0.0 for _, q in whole.raw)
    assert iso.minkowski_content(space, np.zeros(space.n, bool), eps).value == 0.0


def test_minkowski_mesh_too_coarse():
    space, _ = ms.generate_interval_model(0.0, 2.0, 1.0, 100)
    with pytest.raises(MeshTooCoarse):
        iso.minkowski_content(space, space.line_coord <= 0.5, [space.mesh])


def test_minkowski_first_order_convergence():
    # error against h(r) shrinks under refinement
    errs = []
    for n in (500, 2000):
        space, _ = ms.generate_interval_model(1.0, 2.0, np.pi, n)
        A = space.line_coord <= np.pi / 3
        est = iso.minkowski_content(space, A, iso.default_eps_window(space))
        errs.append(abs(est.value - np.sin(np.pi / 3) / 2))
    assert errs[1] <= errs[0]


def test_empirical_profile_interval_matches_cut_oracle():
    space, _ = ms.generate_interval_model(1.0, 2.0, np.pi, 1000)
    ep = iso.empirical_profile(space, 0.5, candidate_budget=16,
                               rng=np.random.default_rng(2))
    # oracle: best interval cut at mass 1/2 has content sin(pi/2)/2
    assert ep.content == pytest.approx(0.5, rel=0.03)
    assert ep.mass_defect <= space.weights.max()


def test_empirical_profile_small_volume_defect():
    space, _ = ms.generate_interval_model(0.0, 2.0, 1.0, 300)
    ep = iso.empirical_profile(space, 0.001, candidate_budget=8,
                               rng=np.random.default_rng(3))
    assert ep.mass_defect >= 0.0
    assert ep.v > 0


def test_levy_gromov_interval_passes():
    space, _ = ms.generate_interval_model(1.0, 2.0, np.pi, 1000)
    rep = iso.levy_gromov_check(space, iso.ModelProfileSpec(1.0, 2.0, np.pi),
                                [0.25, 0.5, 0.75], rng=np.random.default_rng(4))
    assert rep["verdict"] == "pass"
    assert rep["D_used"] == pytest.approx(np.pi, rel=1e-9)


def test_levy_gromov_flat_fails_claimed_curvature():
    # uniform density on [0,1] claimed as CD(1,2): the 1D CD check fails, and
    # the profile deficit at v=1/2 exceeds a tightened allowance
    space, dens = ms.generate_interval_model(0.0, 2.0, 1.0, 800)
    tri = cv.sample_triples(dens.grid, 500, np.random.default_rng(5))
    assert not cv.cd_density_check(dens, 1.0, 2.0, tri).verdict
    rep = iso.levy_gromov_check(space, iso.ModelProfileSpec(1.0, 2.0, 1.0), [0.5],
                                rng=np.random.default_rng(6), allowance=0.02)
    assert rep["verdict"] == "fail"


def test_levy_gromov_trivial_volumes():
    space, _ = ms.generate_interval_model(1.0, 2.0, np.pi, 500)
    rep = iso.levy_gromov_check(space, iso.ModelProfileSpec(1.0, 2.0, np.pi), [0.0, 1.0])
    assert rep["verdict"] == "pass"


def test_sphere_hemisphere_content_sanity():
    sphere = ms.generate_sphere_sample(2, 1000, 0)
    ep = iso.empirical_profile(sphere, 0.5, candidate_budget=12,
                               rng=np.random.default_rng(7), include_potential=False)
    assert ep.content == pytest.approx(0.5, rel=0.15)


def test_sphere_profile_with_potential_candidates():
    sphere = ms.generate_sphere_sample(2, 400, 0)
    ep = iso.empirical_profile(sphere, 0.4, candidate_budget=10,
                               rng=np.random.default_rng(8), include_potential=True)
    assert 0 < ep.content < 2.0
    assert 0.3 < ep.v < 0.5
