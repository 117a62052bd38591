"""Geometry and theta-measure calculus of the cone-like sets A_l(t).

The half-plane S+ = {(s, y): y > 0} carries the measure
theta(ds, dy) = y^-2 ds dy.  The cone over a point t at resolution l is

    A_l(t) = {(s, y): y >= l, |s - t| <= f(y)/2},   f(y) = min(y, T),

with T the integral scale.  Masses and pairwise overlaps of these cones
have closed forms; the overlaps are the covariance kernel of the Gaussian
log-field, so everything here is validated against direct 2D quadrature.
"""

from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import UnsupportedRegimeError, ValidationError

__all__ = [
    "ConeParams",
    "cone_mass",
    "cone_overlap",
    "overlap_quadrature",
    "point_in_cone",
    "overlap_covariance_matrix",
]


@dataclass(frozen=True)
class ConeParams:
    """Resolution scale l and integral scale T, both > 0."""

    l: float
    T: float

    def __post_init__(self):
        if not (self.l > 0.0) or not np.isfinite(self.l):
            raise ValidationError(f"resolution scale l must be finite and > 0, got {self.l}")
        if not (self.T > 0.0) or not np.isfinite(self.T):
            raise ValidationError(f"integral scale T must be finite and > 0, got {self.T}")

    def require_l_below_T(self):
        if self.l > self.T:
            raise UnsupportedRegimeError(
                f"formula only covers l <= T, got l={self.l}, T={self.T}"
            )

    def with_l(self, l: float) -> "ConeParams":
        return ConeParams(l=l, T=self.T)


def cone_mass(p: ConeParams) -> float:
    """theta(A_l(t)): ln(T/l) + 1 for l <= T, T/l for l > T."""
    if p.l <= p.T:
        return float(np.log(p.T / p.l) + 1.0)
    return float(p.T / p.l)


def cone_overlap(p: ConeParams, tau) -> float:
    """theta(A_l(0) ∩ A_l(tau)) for lag tau >= 0 and l <= T.

    Piecewise:
        tau <  l      -> ln(T/l) + 1 - tau/l
        l <= tau <= T -> ln(T/tau)
        tau >  T      -> 0

    Accepts scalars or arrays.  Continuous at both seams.
    """
    p.require_l_below_T()
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0.0):
        raise ValidationError("lag tau must be >= 0")
    mass = np.log(p.T / p.l) + 1.0
    with np.errstate(divide="ignore"):
        mid = np.log(p.T / np.maximum(tau_arr, np.finfo(float).tiny))
    out = np.where(
        tau_arr < p.l,
        mass - tau_arr / p.l,
        np.where(tau_arr <= p.T, mid, 0.0),
    )
    if np.isscalar(tau) or tau_arr.ndim == 0:
        return float(out)
    return out


def overlap_quadrature(p: ConeParams, tau: float, tol: float = 1e-11) -> float:
    """theta(A_l(0) ∩ A_l(tau)) by direct 2D integration of y^-2 over the
    intersection region. Independent of the closed-form branches; used as
    the oracle in the geometry self-test."""
    p.require_l_below_T()
    if tau < 0.0:
        raise ValidationError("lag tau must be >= 0")
    l, T = p.l, p.T

    def s_lo(y):
        return tau - min(y, T) / 2.0

    def s_hi(y):
        return min(y, T) / 2.0

    def inner(y):
        lo, hi = s_lo(y), s_hi(y)
        if hi <= lo:
            return 0.0
        val, _ = integrate.quad(lambda _s: y ** -2, lo, hi, epsabs=tol, epsrel=tol)
        return val

    # Above y_cut = max(T, tau) the cross-section is constant in y, so the
    # tail integrates exactly to max(0, T - tau) / y_cut.
    y_cut = max(T, tau, l) * 2.0
    body, _ = integrate.quad(
        inner, l, y_cut, points=[x for x in (tau, T) if l < x < y_cut],
        epsabs=tol, epsrel=tol, limit=200,
    )
    tail = max(0.0, T - tau) / y_cut
    return body + tail


def point_in_cone(s: float, y: float, t: float, p: ConeParams) -> bool:
    """Membership (s, y) in A_l(t), boundary included; requires y > 0."""
    if y <= 0.0:
        raise ValidationError("cone points live on the open upper half-plane, y > 0")
    if y < p.l:
        return False
    half = min(y, p.T) / 2.0
    return -half <= s - t <= half


def overlap_covariance_matrix(grid, p: ConeParams, sigma2: float) -> np.ndarray:
    """Symmetric PSD matrix C[i, j] = sigma2 * theta(A_l(t_i) ∩ A_l(t_j)).

    The grid must be sorted; dense storage, intended for grids up to 8192
    points (exact Cholesky scale).
    """
    if sigma2 < 0.0:
        raise ValidationError("sigma2 must be >= 0")
    p.require_l_below_T()
    t = np.asarray(grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("grid must be a non-empty 1D array")
    if np.any(np.diff(t) < 0.0):
        raise ValidationError("grid must be sorted")
    if t.size > 8192:
        raise ValidationError("dense covariance path capped at 8192 grid points")
    tau = np.abs(t[:, None] - t[None, :])
    cov = sigma2 * cone_overlap(p, tau)
    # force exact symmetry against fp noise in |t_i - t_j|
    return 0.5 * (cov + cov.T)
