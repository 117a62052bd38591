"""Laplace exponent calculus: closed forms, quadrature, normalization."""

import math

import numpy as np
import pytest
from scipy import integrate

from mrmkit import levy
from mrmkit.errors import CannotNormalizeError, ValidationError


def test_psi_lognormal_closed_form():
    t = levy.lognormal_triple(1.0)
    assert t.m == -0.5
    assert levy.psi(t, 1.0) == pytest.approx(0.0, abs=1e-15)
    # m*2 + sigma2*4/2 = -1 + 2
    assert levy.psi(t, 2.0) == pytest.approx(1.0, abs=1e-14)


def test_psi_atom_at_zero_order():
    t = levy.LevyTriple(m=0.0, sigma2=0.0, nu=levy.AtomicJumps(xs=(0.1,), ws=(1.0,)))
    assert levy.psi(t, 0.0) == 0.0


def test_zeta_normalization_points():
    for tri in (levy.lognormal_triple(0.7),
                levy.normalize(0.2, levy.AtomicJumps(xs=(0.4, -0.3), ws=(1.0, 0.5)))):
        assert levy.zeta(tri, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert levy.zeta(tri, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert levy.zeta(levy.lognormal_triple(1.0), 2.0) == pytest.approx(1.0, abs=1e-14)


def test_normalize_closed_forms():
    assert levy.normalize(1.0, None).m == -0.5
    assert levy.normalize(0.0, None).m == 0.0
    atom = levy.AtomicJumps(xs=(math.log(2.0),), ws=(1.0,))
    tri = levy.normalize(0.0, atom)
    assert tri.m == pytest.approx(-(2.0 - 1.0 - math.sin(math.log(2.0))), abs=1e-15)
    assert levy.psi(tri, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_psi_quadrature_matches_exponential_closed_form():
    # for density c e^{-beta x} on (0, inf) and q < beta:
    #   integral (e^{qx} - 1 - q sin x) nu(dx)
    #     = c (1/(beta - q) - 1/beta - q/(1 + beta^2))
    c, beta = 0.7, 2.5
    nu = levy.exponential_jumps(c, beta)
    tri = levy.LevyTriple(m=0.3, sigma2=0.4, nu=nu)
    for q in (-1.0, 0.5, 1.0, 2.0):
        expected = 0.3 * q + 0.2 * q * q + c * (
            1.0 / (beta - q) - 1.0 / beta - q / (1.0 + beta ** 2)
        )
        assert levy.psi(tri, q) == pytest.approx(expected, rel=1e-9)


def test_psi_infinite_beyond_tail_rate():
    tri = levy.LevyTriple(m=0.0, sigma2=0.0, nu=levy.exponential_jumps(1.0, 2.0))
    assert levy.psi(tri, 2.0) == math.inf
    assert levy.psi(tri, 2.5) == math.inf
    assert levy.zeta(tri, 2.5) == -math.inf
    assert math.isfinite(levy.psi(tri, 1.99))


def test_critical_moment():
    assert levy.critical_moment(levy.lognormal_triple(1.0)) == math.inf
    atoms = levy.AtomicJumps(xs=(0.5,), ws=(2.0,))
    assert levy.critical_moment(levy.LevyTriple(0.0, 0.0, atoms)) == math.inf
    tri = levy.LevyTriple(m=0.0, sigma2=0.0, nu=levy.exponential_jumps(1.0, 2.0))
    assert levy.critical_moment(tri) == pytest.approx(2.0, abs=2e-6)
    # bounded support is finite for every q
    tri2 = levy.LevyTriple(m=0.0, sigma2=0.0, nu=levy.power_small_jumps(1.0, 0.5))
    assert levy.critical_moment(tri2) == math.inf


def test_critical_moment_monotone_in_tail_thickness():
    qcs = []
    for beta in (1.5, 2.0, 4.0):
        tri = levy.LevyTriple(m=0.0, sigma2=0.0, nu=levy.exponential_jumps(1.0, beta))
        qcs.append(levy.critical_moment(tri))
    # heavier tail (smaller beta) gives smaller q_c
    assert qcs[0] < qcs[1] < qcs[2]


def test_check_nondegenerate():
    rep = levy.check_nondegenerate(levy.lognormal_triple(0.5))
    assert rep.nondegenerate and rep.witness_eps is not None
    q = 1.0 + rep.witness_eps
    assert levy.zeta(levy.lognormal_triple(0.5), q) > 1.0
    # zeta(1.5) = 1.25*1.5 - 0.25*1.5^2 = 1.3125 > 1
    assert levy.zeta(levy.lognormal_triple(0.5), 1.5) == pytest.approx(1.3125, abs=1e-12)

    # Lebesgue: zeta(q) = q
    rep = levy.check_nondegenerate(levy.lebesgue_triple())
    assert rep.nondegenerate

    # large variance: zeta stays below 1 on (1, 3]
    rep = levy.check_nondegenerate(levy.lognormal_triple(8.0))
    assert not rep.nondegenerate and rep.witness_eps is None


def test_negative_moment_hypothesis_flag():
    two_sided = levy.DensityJumps(
        density=lambda x: 0.5 * np.exp(-0.8 * np.abs(np.asarray(x, dtype=float))),
        lo=-math.inf, hi=math.inf, eps=1e-6, x_max=60.0,
        pos_rate=0.8, neg_rate=0.8,
    )
    # psi(1) needs pos_rate > 1, so normalize() must refuse
    with pytest.raises(CannotNormalizeError):
        levy.normalize(0.0, two_sided)
    # with a Gaussian component the triple is nondegenerate, but psi(-1) = inf
    ok_side = levy.DensityJumps(
        density=lambda x: 0.5 * np.exp(-0.8 * np.abs(np.asarray(x, dtype=float))),
        lo=-math.inf, hi=-1e-6, eps=1e-6, x_max=60.0, neg_rate=0.8,
    )
    tri = levy.normalize(0.5, ok_side)
    rep = levy.check_nondegenerate(tri)
    assert not rep.hypothesis_ok
    assert levy.psi(tri, -1.0) == math.inf


def test_validation_errors():
    with pytest.raises(ValidationError):
        levy.LevyTriple(m=0.0, sigma2=-1.0)
    with pytest.raises(ValidationError):
        levy.AtomicJumps(xs=(0.1,), ws=(-1.0,))
    with pytest.raises(ValidationError):
        levy.AtomicJumps(xs=(0.0,), ws=(1.0,))
    with pytest.raises(ValidationError):
        levy.exponential_jumps(1.0, -2.0)
    with pytest.raises(ValidationError):
        levy.power_small_jumps(1.0, 2.5)
    with pytest.raises(ValidationError):
        # unbounded support without a tail hint
        levy.DensityJumps(density=lambda x: np.exp(-np.asarray(x)), lo=0.0,
                          hi=math.inf, eps=1e-6, x_max=10.0)


def _random_triples(rng, n):
    triples = []
    for _ in range(n):
        kind = rng.integers(0, 3)
        sigma2 = float(rng.uniform(0.0, 2.0))
        if kind == 0:
            triples.append(levy.normalize(sigma2 + 0.01, None))
        elif kind == 1:
            k = int(rng.integers(1, 4))
            xs = tuple(float(x) for x in rng.uniform(-1.0, 1.0, k))
            xs = tuple(x if x != 0.0 else 0.1 for x in xs)
            ws = tuple(float(w) for w in rng.uniform(0.1, 2.0, k))
            triples.append(levy.normalize(sigma2, levy.AtomicJumps(xs=xs, ws=ws)))
        else:
            beta = float(rng.uniform(1.5, 5.0))
            triples.append(levy.normalize(sigma2, levy.exponential_jumps(1.0, beta)))
    return triples


def test_normalization_and_concavity_random_triples():
    rng = np.random.default_rng(20240817)
    for tri in _random_triples(rng, 20):
        assert abs(levy.psi(tri, 1.0)) <= 1e-12
        qc = levy.critical_moment(tri)
        q_hi = min(qc * 0.98, 3.0)
        qs = np.linspace(-0.5, q_hi, 41)
        zs = np.array([levy.zeta(tri, float(q)) for q in qs])
        second = zs[:-2] - 2.0 * zs[1:-1] + zs[2:]
        assert np.all(second <= 1e-9)


def test_pure_gaussian_shortcut_exact():
    rng = np.random.default_rng(7)
    for _ in range(10):
        m = float(rng.normal())
        s2 = float(rng.uniform(0.0, 3.0))
        tri = levy.LevyTriple(m=m, sigma2=s2)
        for q in rng.uniform(-3.0, 3.0, 5):
            assert abs(levy.psi(tri, q) - (m * q + 0.5 * s2 * q * q)) <= 1e-14


def test_psi_convexity_chord():
    tri = levy.normalize(0.3, levy.exponential_jumps(0.5, 3.0))
    qs = np.linspace(-1.0, 2.5, 15)
    ps = np.array([levy.psi(tri, float(q)) for q in qs])
    for i in range(len(qs) - 2):
        chord = ps[i] + (ps[i + 2] - ps[i]) * (qs[i + 1] - qs[i]) / (qs[i + 2] - qs[i])
        assert ps[i + 1] <= chord + 1e-9


def test_exponent_table_invariants():
    tri = levy.lognormal_triple(0.6)
    table = levy.exponent_table(tri, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert table.q_c == math.inf
    assert np.allclose(table.zeta_vals, table.qs - table.psi_vals)
    # tampering must be caught
    with pytest.raises(ValidationError):
        levy.ExponentTable(qs=table.qs, psi_vals=table.psi_vals,
                           zeta_vals=table.zeta_vals + 0.1, q_c=table.q_c)
    with pytest.raises(ValidationError):
        bad = np.array([0.0, 1.0, 0.5])  # convex bump breaks concavity
        levy.ExponentTable(qs=np.array([0.0, 0.5, 1.0]),
                           psi_vals=np.array([0.0, 0.5, 1.0]) - bad,
                           zeta_vals=bad, q_c=math.inf)


def test_integrand_stable_near_zero():
    for q in (0.5, 2.0, -1.5):
        for x in (1e-9, 1e-6, 1e-4):
            lead = 0.5 * q * q * x * x + q * (q * q + 1.0) * x ** 3 / 6.0
            val = float(levy.lk_integrand(q, x))
            assert val == pytest.approx(lead, rel=1e-6)


def test_small_jump_quadrature_against_oracle():
    nu = levy.power_small_jumps(1.0, 0.5, hi=1.0, eps=0.01)
    # independent quadrature of the psi integrand against the density
    oracle, _ = integrate.quad(
        lambda x: (math.exp(0.8 * x) - 1.0 - 0.8 * math.sin(x)) * x ** -1.5,
        0.0, 1.0,
    )
    tri = levy.LevyTriple(m=0.0, sigma2=0.0, nu=nu)
    assert levy.psi(tri, 0.8) == pytest.approx(oracle, rel=1e-8)
