"""Cone masses, overlaps, the quadrature oracle and covariance assembly."""

import math

import numpy as np
import pytest

from mrmkit import cones
from mrmkit.errors import UnsupportedRegimeError, ValidationError


def test_cone_mass_values():
    T = 2.0
    assert cones.cone_mass(cones.ConeParams(l=T, T=T)) == pytest.approx(1.0)
    assert cones.cone_mass(cones.ConeParams(l=T / math.e, T=T)) == pytest.approx(2.0)
    assert cones.cone_mass(cones.ConeParams(l=2 * T, T=T)) == pytest.approx(0.5)


def test_cone_mass_validation():
    with pytest.raises(ValidationError):
        cones.ConeParams(l=0.0, T=1.0)
    with pytest.raises(ValidationError):
        cones.ConeParams(l=1.0, T=-1.0)


def test_point_in_cone():
    p = cones.ConeParams(l=0.25, T=1.0)
    assert cones.point_in_cone(s=0.3, y=0.25, t=0.3, p=p)          # apex column
    assert not cones.point_in_cone(s=0.3 + 1.0, y=5.0, t=0.3, p=p)  # |s-t| = T
    # boundary included: s = t + y/2 with y = T/2 >= l
    assert cones.point_in_cone(s=0.25, y=0.5, t=0.0, p=p)
    assert not cones.point_in_cone(s=0.0, y=0.1, t=0.0, p=p)        # below apex
    with pytest.raises(ValidationError):
        cones.point_in_cone(s=0.0, y=0.0, t=0.0, p=p)


def test_overlap_branches():
    T = 1.0
    p = cones.ConeParams(l=T / 8.0, T=T)
    assert cones.cone_overlap(p, 0.0) == pytest.approx(cones.cone_mass(p), abs=1e-15)
    assert cones.cone_overlap(p, T / 2.0) == pytest.approx(math.log(2.0), abs=1e-12)
    assert cones.cone_overlap(p, T) == pytest.approx(0.0, abs=1e-15)
    assert cones.cone_overlap(p, 1.7 * T) == 0.0


def test_overlap_seam_continuity_and_monotonicity():
    rng = np.random.default_rng(11)
    for _ in range(20):
        T = float(rng.uniform(0.5, 3.0))
        l = float(T * rng.uniform(0.01, 0.99))
        p = cones.ConeParams(l=l, T=T)
        gap = cones.cone_overlap(p, l * (1.0 - 1e-14)) - math.log(T / l)
        assert abs(gap) <= 1e-12
        taus = np.sort(rng.uniform(0.0, 1.2 * T, 30))
        vals = cones.cone_overlap(p, taus)
        assert np.all(np.diff(vals) <= 1e-14)


def test_overlap_matches_quadrature_oracle():
    rng = np.random.default_rng(404)
    for _ in range(12):
        T = float(rng.uniform(0.5, 4.0))
        l = float(T * rng.uniform(0.02, 1.0))
        tau = float(rng.uniform(0.0, 1.4) * T)
        p = cones.ConeParams(l=l, T=T)
        assert cones.cone_overlap(p, tau) == pytest.approx(
            cones.overlap_quadrature(p, tau), abs=1e-8
        )


def test_overlap_refuses_l_above_T():
    p = cones.ConeParams(l=2.0, T=1.0)
    with pytest.raises(UnsupportedRegimeError):
        cones.cone_overlap(p, 0.5)
    with pytest.raises(UnsupportedRegimeError):
        cones.overlap_quadrature(p, 0.5)


def test_rescaling_shifts_overlap_by_log():
    T = 1.0
    p = cones.ConeParams(l=T / 16.0, T=T)
    for lam in (0.5, 0.25):
        fine = cones.ConeParams(l=lam * p.l, T=T)
        for tau in (0.0, p.l / 2.0, 3.0 * p.l, 0.9 * T):
            gap = cones.cone_overlap(fine, lam * tau) - cones.cone_overlap(p, tau)
            assert gap == pytest.approx(math.log(1.0 / lam), abs=1e-12)


def test_covariance_matrix_small_cases():
    p = cones.ConeParams(l=0.125, T=1.0)
    single = cones.overlap_covariance_matrix([0.4], p, 0.7)
    assert single.shape == (1, 1)
    assert single[0, 0] == pytest.approx(0.7 * cones.cone_mass(p))
    pair = cones.overlap_covariance_matrix([0.0, 1.0], p, 1.0)
    assert pair[0, 1] == 0.0 and pair[1, 0] == 0.0


def test_covariance_matrix_psd_random_grids():
    rng = np.random.default_rng(2024)
    for n in (16, 128, 512):
        T = float(rng.uniform(0.5, 2.0))
        l = float(T * rng.uniform(0.01, 0.5))
        grid = np.sort(rng.uniform(0.0, T, n))
        cov = cones.overlap_covariance_matrix(grid, cones.ConeParams(l=l, T=T), 1.3)
        assert np.allclose(cov, cov.T)
        w = np.linalg.eigvalsh(cov)
        assert w.min() >= -1e-10 * np.trace(cov)


def test_covariance_matrix_validation():
    p = cones.ConeParams(l=0.1, T=1.0)
    with pytest.raises(ValidationError):
        cones.overlap_covariance_matrix([0.5, 0.1], p, 1.0)   # unsorted
    with pytest.raises(ValidationError):
        cones.overlap_covariance_matrix([0.1], p, -1.0)       # negative variance
    with pytest.raises(ValidationError):
        cones.overlap_covariance_matrix(np.zeros((2, 2)), p, 1.0)
