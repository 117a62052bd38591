"""Field samplers: Gaussian-exact, Poisson-exact, truncated-general."""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from mrmkit import cones, fields, levy
from mrmkit.errors import CoverageError, ValidationError
from mrmkit.seeding import derive_seed

CONE = cones.ConeParams(l=1.0 / 64.0, T=1.0)


def test_staggered_grid():
    g = fields.staggered_grid(2.0, 4)
    assert np.allclose(g, [0.25, 0.75, 1.25, 1.75])
    with pytest.raises(ValidationError):
        fields.staggered_grid(-1.0, 4)


def test_determinism_bit_identical():
    grid = fields.staggered_grid(1.0, 32)
    tri = levy.lognormal_triple(0.5)
    a = fields.sample_gaussian_field(grid, CONE, tri, 123)
    b = fields.sample_gaussian_field(grid, CONE, tri, 123)
    assert np.array_equal(a.values, b.values)
    c = fields.sample_gaussian_field(grid, CONE, tri, 124)
    assert not np.array_equal(a.values, c.values)

    atoms = levy.normalize(0.0, levy.AtomicJumps(xs=(0.3,), ws=(1.0,)))
    f1 = fields.sample_field(grid, CONE, atoms, 9)
    f2 = fields.sample_field(grid, CONE, atoms, 9)
    assert np.array_equal(f1.values, f2.values)
    assert f1.method == "poisson-exact"

    dens = levy.normalize(0.1, levy.power_small_jumps(1.0, 0.5, hi=1.0, eps=0.01))
    g1 = fields.sample_field(grid, CONE, dens, 5)
    g2 = fields.sample_field(grid, CONE, dens, 5)
    assert np.array_equal(g1.values, g2.values)
    assert g1.method == "truncated-general"


def test_gaussian_single_point_marginal():
    tri = levy.lognormal_triple(0.5)
    sampler = fields.GaussianFieldSampler(np.array([0.3]), CONE, tri)
    mass = cones.cone_mass(CONE)
    # covariance constructor carries the exact variance
    assert sampler.chol[0, 0] ** 2 == pytest.approx(0.5 * mass, rel=1e-12)
    draws = sampler.draw_block([derive_seed(1, "m", i) for i in range(20000)]).ravel()
    se_mean = math.sqrt(0.5 * mass / len(draws))
    assert abs(draws.mean() - tri.m * mass) <= 4.0 * se_mean
    assert draws.var() == pytest.approx(0.5 * mass, rel=0.05)


def test_distant_points_independent():
    tri = levy.lognormal_triple(1.0)
    sampler = fields.GaussianFieldSampler(np.array([0.0, 1.0]), CONE, tri)
    assert sampler.chol[1, 0] == 0.0  # zero covariance -> uncorrelated draws
    block = sampler.draw_block([derive_seed(2, "m", i) for i in range(100000)])
    corr = np.corrcoef(block[:, 0], block[:, 1])[0, 1]
    assert abs(corr) <= 4.0 / math.sqrt(block.shape[0])


def test_poisson_cloud_counts_and_marginals():
    atoms = levy.AtomicJumps(xs=(0.5, -0.2), ws=(0.6, 0.4))
    window = (-0.5, 1.5)
    counts = []
    for i in range(3000):
        cl = fields.sample_poisson_points(window, CONE, atoms, derive_seed(3, "c", i))
        counts.append(len(cl.s))
    mu = (window[1] - window[0]) * atoms.total_mass / CONE.l
    assert np.mean(counts) == pytest.approx(mu, abs=4.0 * math.sqrt(mu / len(counts)))

    big = fields.sample_poisson_points(window, CONE, atoms, 99)
    # y-marginal: P(y > a) = l/a, i.e. CDF 1 - l/y on [l, inf)
    ks_y = stats.kstest(big.y, lambda a: 1.0 - CONE.l / a)
    assert ks_y.pvalue > 0.01
    ks_s = stats.kstest(big.s, stats.uniform(loc=window[0], scale=2.0).cdf)
    assert ks_s.pvalue > 0.01


def test_poisson_cloud_empty_and_validation():
    empty = levy.AtomicJumps(xs=(), ws=())
    cl = fields.sample_poisson_points((0.0, 1.0), CONE, empty, 1)
    assert len(cl.s) == 0
    with pytest.raises(ValidationError):
        fields.sample_poisson_points((0.0, 1.0), CONE,
                                     levy.power_small_jumps(1.0, 0.5), 1)


def test_assemble_pure_drift():
    grid = fields.staggered_grid(1.0, 16)
    tri = levy.LevyTriple(m=-0.3, sigma2=0.0, nu=levy.AtomicJumps(xs=(), ws=()))
    cloud = fields.sample_poisson_points(fields.default_window(grid, CONE), CONE,
                                         tri.nu, 4)
    f = fields.assemble_omega(grid, cloud, CONE, tri, 4)
    assert np.allclose(f.values, -0.3 * cones.cone_mass(CONE), atol=1e-15)


def test_assemble_injected_point_shifts_all_values():
    grid = fields.staggered_grid(0.25, 16)
    atoms = levy.AtomicJumps(xs=(0.7,), ws=(1.0,))
    tri = levy.LevyTriple(m=0.1, sigma2=0.0, nu=atoms)
    window = fields.default_window(grid, CONE)
    empty = fields.PointCloud(s=np.array([]), y=np.array([]), x=np.array([]),
                              window=window, cone=CONE, expected_count=0.0, seed=0)
    base = fields.assemble_omega(grid, empty, CONE, tri, 0)
    # one point high above the domain: f(y) = T covers every grid cone
    inject = fields.PointCloud(s=np.array([0.125]), y=np.array([10.0]),
                               x=np.array([0.7]), window=window, cone=CONE,
                               expected_count=0.0, seed=0)
    shifted = fields.assemble_omega(grid, inject, CONE, tri, 0)
    assert np.allclose(shifted.values - base.values, 0.7, atol=1e-15)


def test_jump_sums_match_pointwise_membership():
    rng = np.random.default_rng(31)
    grid = np.sort(rng.uniform(0.0, 1.0, 40))  # non-uniform -> fallback path
    ugrid = fields.staggered_grid(1.0, 64)     # uniform -> fast path
    atoms = levy.AtomicJumps(xs=(1.0,), ws=(1.0,))
    window = fields.default_window(ugrid, CONE)
    cloud = fields.sample_poisson_points(window, CONE, atoms, 77)
    for g in (grid, ugrid):
        sums = fields._jump_sums(g, cloud, CONE)
        direct = np.zeros(len(g))
        for s, y, x in zip(cloud.s, cloud.y, cloud.x):
            for j, t in enumerate(g):
                if cones.point_in_cone(s, y, t, CONE):
                    direct[j] += x
        assert np.allclose(sums, direct, atol=1e-12)


def test_window_coverage_error():
    grid = fields.staggered_grid(1.0, 8)
    atoms = levy.AtomicJumps(xs=(0.1,), ws=(1.0,))
    tri = levy.LevyTriple(m=0.0, sigma2=0.0, nu=atoms)
    small = fields.sample_poisson_points((0.0, 1.0), CONE, atoms, 3)
    with pytest.raises(CoverageError):
        fields.assemble_omega(grid, small, CONE, tri, 3)


@pytest.mark.parametrize("maker, n_rep", [
    ("gaussian", 20000),
    ("poisson", 6000),
    ("general", 4000),
])
def test_martingale_normalization_all_methods(maker, n_rep):
    grid = np.array([0.2])
    if maker == "gaussian":
        tri = levy.lognormal_triple(0.5)
        sampler = fields.GaussianFieldSampler(grid, CONE, tri)
        vals = sampler.draw_block([derive_seed(8, maker, i) for i in range(n_rep)]).ravel()
    else:
        if maker == "poisson":
            tri = levy.normalize(0.0, levy.AtomicJumps(xs=(0.3, -0.4), ws=(0.8, 0.5)))
        else:
            tri = levy.normalize(0.2, levy.power_small_jumps(0.5, 0.5, hi=1.0, eps=0.02))
        sim, _ = fields.split_triple(tri)
        vals = np.array([
            fields.sample_field(grid, CONE, sim, derive_seed(8, maker, i)).values[0]
            for i in range(n_rep)
        ])
    ee = np.exp(vals)
    se = ee.std(ddof=1) / math.sqrt(n_rep)
    assert abs(ee.mean() - 1.0) <= 4.0 * se


def test_small_jump_split_closed_form():
    nu = levy.power_small_jumps(1.0, 0.5, hi=1.0, eps=0.01)
    finite, comp, drift = fields.small_jump_split(nu, 0.01)
    assert comp == pytest.approx((2.0 / 3.0) * 0.01 ** 1.5, rel=1e-10)
    oracle, _ = integrate.quad(lambda x: x ** 2 * x ** -1.5, 0.0, 0.01)
    assert comp == pytest.approx(oracle, rel=1e-8)
    drift_oracle, _ = integrate.quad(lambda x: (x - math.sin(x)) * x ** -1.5, 0.0, 0.01)
    assert drift == pytest.approx(drift_oracle, rel=1e-6)
    assert finite.total_mass == pytest.approx(
        integrate.quad(lambda x: x ** -1.5, 0.01, 1.0)[0], rel=1e-9
    )


def test_small_jump_split_atomic_identity():
    atoms = levy.AtomicJumps(xs=(0.5, -0.8), ws=(1.0, 2.0))
    finite, comp, drift = fields.small_jump_split(atoms, 0.1)
    assert finite.xs == atoms.xs and comp == 0.0 and drift == 0.0
    finite2, comp2, _ = fields.small_jump_split(atoms, 0.6)
    assert finite2.xs == (-0.8,)
    assert comp2 == pytest.approx(0.25, abs=1e-15)


def test_small_jump_split_eps_beyond_support():
    nu = levy.power_small_jumps(1.0, 0.5, hi=1.0, eps=0.01)
    finite, comp, drift = fields.small_jump_split(nu, 2.0)
    assert finite.total_mass == 0.0
    assert comp == pytest.approx(integrate.quad(lambda x: x ** 0.5, 0.0, 1.0)[0], rel=1e-8)


def test_split_preserves_exponent():
    tri = levy.normalize(0.1, levy.power_small_jumps(1.0, 0.5, hi=1.0, eps=0.01))
    sim, was = fields.split_triple(tri)
    assert was
    for q in (0.5, 1.0, 1.5, 2.0):
        assert abs(levy.psi(sim, q) - levy.psi(tri, q)) <= 1e-5


def test_scale_invariance_gaussian_deterministic():
    tri = levy.lognormal_triple(1.0)
    for lam in (0.5, 0.25):
        rep = fields.scale_invariance_check(CONE, tri, lam)
        assert rep.kind == "deterministic"
        assert rep.passed
    rep1 = fields.scale_invariance_check(CONE, tri, 1.0)
    assert rep1.passed
    assert rep1.statistics["variance_gap"][0] <= 1e-15


def test_scale_invariance_jump_monte_carlo():
    tri = levy.normalize(0.0, levy.AtomicJumps(xs=(0.4,), ws=(1.5,)))
    cone = cones.ConeParams(l=1.0 / 32.0, T=1.0)
    rep = fields.scale_invariance_check(cone, tri, 0.5, replicas=2500, seed=17)
    assert rep.kind == "monte-carlo"
    assert rep.passed, rep.statistics


def test_coupled_refinement_covariance():
    tri = levy.lognormal_triple(0.8)
    cone = cones.ConeParams(l=0.25, T=1.0)
    sampler = fields.CoupledRefinementSampler(cone, tri, 1.0, 4, 2)
    draws = np.stack([
        np.concatenate([f.values for f in sampler.sample(derive_seed(5, "r", i))])
        for i in range(4000)
    ])
    emp = np.cov(draws.T)
    theory = sampler.chol @ sampler.chol.T
    assert np.allclose(emp, theory, atol=0.35)
    # variance of level k equals sigma2 * theta(A_{l_k}) on the diagonal
    for k, pc in enumerate(sampler.cones):
        var = theory[sampler.offs[k], sampler.offs[k]]
        assert var == pytest.approx(0.8 * cones.cone_mass(pc), rel=1e-12)


def test_field_dump_roundtrip(tmp_path):
    grid = fields.staggered_grid(1.0, 32)
    tri = levy.lognormal_triple(0.5)
    f = fields.sample_gaussian_field(grid, CONE, tri, 42)
    path = str(tmp_path / "f.bin")
    fields.write_field1d(f, path)
    back = fields.read_field1d(path)
    assert back["n"] == 32 and back["seed"] == 42
    assert back["l"] == CONE.l and back["T"] == CONE.T
    assert back["method"] == "gaussian-exact"
    assert np.array_equal(back["values"], f.values)
