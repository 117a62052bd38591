"""Analytic calculus of infinitely divisible Laplace exponents.

A triple (m, sigma2, nu) defines the exponent per unit cone mass

    psi(q) = m q + sigma2 q^2 / 2 + integral (e^{qx} - 1 - q sin x) nu(dx),

the structure function zeta(q) = q - psi(q), the critical moment
q_c = sup{q >= 0 : psi(q) < inf}, and the standing normalization
psi(1) = 0 that makes the associated measure a mean-one martingale.

Jump measures come in three computable kinds: none, finite atomic, and a
parametric density with a small-jump cutoff, a quadrature truncation and
exponential tail-rate hints (the hints decide psi finiteness instead of
letting the quadrature blow up).
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .errors import CannotNormalizeError, NumericalError, ValidationError

__all__ = [
    "AtomicJumps",
    "DensityJumps",
    "TruncatedDensity",
    "LevyTriple",
    "ExponentTable",
    "NondegeneracyReport",
    "psi",
    "psi_is_finite",
    "zeta",
    "normalize",
    "critical_moment",
    "check_nondegenerate",
    "exponent_table",
    "exponential_jumps",
    "power_small_jumps",
    "lognormal_triple",
    "lebesgue_triple",
]

_QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-11, limit=400)


# ---------------------------------------------------------------------------
# stable Levy-Khintchine integrand
# ---------------------------------------------------------------------------

def _expm1_minus(u):
    """e^u - 1 - u, series-corrected near 0 to avoid cancellation."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 0.125
    us = np.where(small, u, 0.0)
    # sum_{k>=2} u^k / k!  via Horner on u^2/2 * (1 + u/3 + u^2/12 + ...)
    acc = np.zeros_like(us)
    for k in range(12, 2, -1):
        acc = (acc + 1.0) * us / k
    series = 0.5 * us * us * (1.0 + acc)
    with np.errstate(over="ignore"):
        direct = np.expm1(np.where(small, 0.0, u)) - np.where(small, 0.0, u)
    return np.where(small, series, direct)


def _x_minus_sin(x):
    """x - sin(x), series-corrected near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.125
    xs = np.where(small, x, 0.0)
    x2 = xs * xs
    series = (x2 * xs / 6.0) * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    direct = np.where(small, 0.0, x) - np.sin(np.where(small, 0.0, x))
    return np.where(small, series, direct)


def lk_integrand(q: float, x):
    """e^{qx} - 1 - q sin(x), numerically stable down to x = 0.

    Behaves like q^2 x^2 / 2 near the origin, so it integrates against any
    Levy measure with a finite second moment near 0.
    """
    x = np.asarray(x, dtype=float)
    return _expm1_minus(q * x) + q * _x_minus_sin(x)


# ---------------------------------------------------------------------------
# jump measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AtomicJumps:
    """Finite atomic Levy measure: atoms x_j with weights w_j > 0."""

    xs: tuple
    ws: tuple

    def __post_init__(self):
        xs = tuple(float(x) for x in self.xs)
        ws = tuple(float(w) for w in self.ws)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ws", ws)
        if len(xs) != len(ws):
            raise ValidationError("atoms and weights must have equal length")
        if any(w <= 0.0 or not math.isfinite(w) for w in ws):
            raise ValidationError("all atomic weights must be finite and > 0")
        if any(x == 0.0 or not math.isfinite(x) for x in xs):
            raise ValidationError("atoms must be finite and nonzero")

    @property
    def total_mass(self) -> float:
        return float(sum(self.ws))

    def psi_integral(self, q: float) -> float:
        return float(np.dot(self.ws, lk_integrand(q, np.asarray(self.xs))))

    def sin_integral(self) -> float:
        return float(np.dot(self.ws, np.sin(self.xs)))

    def moment(self, k: int) -> float:
        return float(np.dot(self.ws, np.power(self.xs, k)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0)
        p = np.asarray(self.ws) / self.total_mass
        return rng.choice(np.asarray(self.xs), size=n, p=p)


def _guarded_product(weight: Callable, density: Callable) -> Callable:
    """weight * density with the convention inf * 0 = 0: far tails where the
    density underflows to zero contribute nothing even if the weight
    overflows there."""

    def fun(x):
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.asarray(weight(x), dtype=float)
            d = np.asarray(density(x), dtype=float)
            out = np.where(d == 0.0, 0.0, w * d)
        return float(out) if out.ndim == 0 else out

    return fun


def _quad(fun, a, b, points=None):
    kw = dict(_QUAD_OPTS)
    if points is not None and np.isfinite(a) and np.isfinite(b):
        pts = [p for p in points if a < p < b]
        if pts:
            kw["points"] = pts
    out = integrate.quad(fun, a, b, full_output=1, **kw)
    val, abserr = out[0], out[1]
    if len(out) > 3:
        # quad reported trouble; accept only if the error estimate is still tight
        if abserr > max(1e-8, 1e-6 * abs(val)):
            raise NumericalError(
                f"quadrature failed on [{a}, {b}]: {out[3].strip()} (abserr={abserr:.2e})"
            )
    if abserr > max(1e-8, 1e-6 * abs(val)):
        raise NumericalError(f"quadrature did not converge on [{a}, {b}] (abserr={abserr:.2e})")
    return val


@dataclass(frozen=True)
class DensityJumps:
    """Levy measure given by a density on an interval (lo, hi).

    eps      small-jump cutoff: below |x| = eps the integrand switches to its
             series form and the default truncation of :func:`small_jump_split`
             applies; must be > 0.
    x_max    quadrature truncation for infinite tails.
    pos_rate / neg_rate
             exponential decay rates bounding the density beyond x_max
             (density <= C e^{-rate |x|}); required on any unbounded side.
             They decide finiteness of psi: e^{qx} integrates against the
             positive tail iff q < pos_rate.
    """

    density: Callable
    lo: float
    hi: float
    eps: float
    x_max: float
    pos_rate: Optional[float] = None
    neg_rate: Optional[float] = None
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.eps > 0.0):
            raise ValidationError("small-jump cutoff eps must be > 0")
        if not (self.lo < self.hi):
            raise ValidationError("support must satisfy lo < hi")
        if not (self.x_max > 0.0):
            raise ValidationError("x_max must be > 0")
        if math.isinf(self.hi) and self.pos_rate is None:
            raise ValidationError("unbounded-above support needs a pos_rate tail hint")
        if math.isinf(self.lo) and self.neg_rate is None:
            raise ValidationError("unbounded-below support needs a neg_rate tail hint")
        # integrability check: min(1, x^2) must integrate over [-x_max, x_max]
        try:
            chk = self._integrate(lambda x: np.minimum(1.0, np.asarray(x) ** 2), clip=True)
        except NumericalError as exc:
            raise ValidationError(f"min(1, x^2) integrability check failed: {exc}") from exc
        if not math.isfinite(chk):
            raise ValidationError("min(1, x^2) does not integrate against the density")

    def _segments(self, clip: bool):
        lo = max(self.lo, -self.x_max) if clip else self.lo
        hi = min(self.hi, self.x_max) if clip else self.hi
        knots = sorted(
            {lo, hi, *(k for k in (-self.x_max, -self.eps, 0.0, self.eps, self.x_max) if lo < k < hi)}
        )
        return list(zip(knots[:-1], knots[1:]))

    def _integrate(self, weight: Callable, clip: bool = False) -> float:
        total = 0.0
        for a, b in self._segments(clip):
            total += _quad(_guarded_product(weight, self.density), a, b)
        return total

    def psi_integral(self, q: float) -> float:
        """integral of the LK integrand against the density over the full
        support (tails included when finite). Caller checks finiteness."""
        return self._integrate(lambda x: lk_integrand(q, x))

    def restrict(self, eps: Optional[float] = None) -> "TruncatedDensity":
        """Finite-mass restriction to |x| >= eps."""
        return TruncatedDensity(self, self.eps if eps is None else float(eps))

    def mass_below(self, eps: float, weight: Callable) -> float:
        """integral of weight(x) * density over |x| < eps (within support)."""
        total = 0.0
        a, b = max(self.lo, -eps), min(self.hi, eps)
        if a < 0.0 < b:
            total += _quad(lambda x: weight(x) * self.density(x), a, 0.0)
            total += _quad(lambda x: weight(x) * self.density(x), 0.0, b)
        elif a < b:
            total += _quad(lambda x: weight(x) * self.density(x), a, b)
        return total


class TruncatedDensity:
    """Finite-total-mass restriction of a DensityJumps to |x| >= eps.

    Provides the same integral interface as AtomicJumps plus inverse-CDF
    sampling from a dense table (tail mass beyond the table < 1e-12 of the
    total, by construction).
    """

    _TABLE_N = 4097

    def __init__(self, base: DensityJumps, eps: float):
        if eps <= 0.0:
            raise ValidationError("truncation eps must be > 0")
        self.base = base
        self.eps = float(eps)
        segs = []
        for a, b in base._segments(clip=False):
            a2, b2 = a, b
            if a2 < eps and b2 > -eps:  # clip out (-eps, eps)
                if b2 <= eps and a2 >= -eps:
                    continue
                if a2 >= -eps:
                    a2 = max(a2, eps)
                elif b2 <= eps:
                    b2 = min(b2, -eps)
            if b2 <= a2:
                continue
            segs.append((a2, b2))
        self.segments = self._finite_segments(segs)
        self.total_mass = sum(_quad(base.density, a, b) for a, b in self.segments)
        self._build_cdf()

    def _finite_segments(self, segs):
        out = []
        for a, b in segs:
            if math.isinf(a):
                a = self._find_far(b_side=False)
            if math.isinf(b):
                b = self._find_far(b_side=True)
            out.append((a, b))
        return out

    def _find_far(self, b_side: bool) -> float:
        # walk outward until the remaining tail is negligible
        x = self.base.x_max
        rate = self.base.pos_rate if b_side else self.base.neg_rate
        x = x + 40.0 / rate
        return x if b_side else -x

    def _build_cdf(self):
        xs_all, cdf_all = [], []
        acc = 0.0
        for a, b in self.segments:
            xs = np.linspace(a, b, self._TABLE_N)
            dens = np.maximum(np.asarray(self.base.density(xs), dtype=float), 0.0)
            inc = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(xs))])
            seg_mass = _quad(self.base.density, a, b)
            if inc[-1] > 0.0:
                inc *= seg_mass / inc[-1]
            xs_all.append(xs)
            cdf_all.append(acc + inc)
            acc += seg_mass
        self._xs = np.concatenate(xs_all)
        self._cdf = np.concatenate(cdf_all)
        # strictly increasing for interp: collapse flat spots
        self._cdf = np.maximum.accumulate(self._cdf)
        if acc > 0.0:
            self._cdf *= self.total_mass / acc

    def psi_integral(self, q: float) -> float:
        return sum(
            _quad(lambda x: lk_integrand(q, x) * self.base.density(x), a, b)
            for a, b in self.segments
        )

    def sin_integral(self) -> float:
        return sum(
            _quad(lambda x: np.sin(x) * self.base.density(x), a, b) for a, b in self.segments
        )

    def moment(self, k: int) -> float:
        return sum(
            _quad(lambda x: np.asarray(x) ** k * self.base.density(x), a, b)
            for a, b in self.segments
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n == 0 or self.total_mass == 0.0:
            return np.empty(0)
        u = rng.random(n) * self.total_mass
        return np.interp(u, self._cdf, self._xs)


JumpMeasure = Union[None, AtomicJumps, DensityJumps, TruncatedDensity]


# ---------------------------------------------------------------------------
# the triple and its calculus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevyTriple:
    """Drift m, Gaussian variance sigma2 >= 0 and jump measure nu."""

    m: float
    sigma2: float
    nu: JumpMeasure = None

    def __post_init__(self):
        if not math.isfinite(self.m):
            raise ValidationError("drift m must be finite")
        if not math.isfinite(self.sigma2) or self.sigma2 < 0.0:
            raise ValidationError("sigma2 must be finite and >= 0")

    @property
    def is_gaussian(self) -> bool:
        return self.nu is None

    def zeta_fn(self) -> Callable[[float], float]:
        return lambda q: zeta(self, q)


def _tails_finite(nu: JumpMeasure, q: float) -> bool:
    if nu is None or isinstance(nu, AtomicJumps):
        return True
    base = nu.base if isinstance(nu, TruncatedDensity) else nu
    if q > 0.0 and math.isinf(base.hi) and q >= base.pos_rate:
        return False
    if q < 0.0 and math.isinf(base.lo) and -q >= base.neg_rate:
        return False
    return True


def psi_is_finite(triple: LevyTriple, q: float) -> bool:
    """Whether psi(q) < inf, decided by the explicit tail test."""
    return _tails_finite(triple.nu, q)


def psi(triple: LevyTriple, q: float) -> float:
    """Laplace exponent per unit theta-mass; returns math.inf when the
    exponential-tail integral diverges."""
    q = float(q)
    gauss = triple.m * q + 0.5 * triple.sigma2 * q * q
    if triple.nu is None:
        return gauss
    if not _tails_finite(triple.nu, q):
        return math.inf
    return gauss + triple.nu.psi_integral(q)


def zeta(triple: LevyTriple, q: float) -> float:
    """Structure function zeta(q) = q - psi(q); -inf where psi diverges."""
    p = psi(triple, q)
    if math.isinf(p):
        return -math.inf
    return q - p


def normalize(sigma2: float, nu: JumpMeasure = None) -> LevyTriple:
    """Build the triple with drift chosen so that psi(1) = 0.

    m = -sigma2/2 - integral (e^x - 1 - sin x) nu(dx).
    """
    if not math.isfinite(sigma2) or sigma2 < 0.0:
        raise ValidationError("sigma2 must be finite and >= 0")
    if nu is None:
        shift = 0.0
    else:
        if not _tails_finite(nu, 1.0):
            raise CannotNormalizeError(
                "integral of e^x against nu diverges; cannot enforce psi(1)=0"
            )
        shift = nu.psi_integral(1.0)
    return LevyTriple(m=-0.5 * sigma2 - shift, sigma2=sigma2, nu=nu)


def critical_moment(triple: LevyTriple, tol: float = 1e-6) -> float:
    """q_c = sup{q >= 0 : psi(q) < inf}; math.inf for Gaussian/atomic nu,
    bisection on psi finiteness for density-type nu."""
    nu = triple.nu
    if nu is None or isinstance(nu, AtomicJumps):
        return math.inf
    base = nu.base if isinstance(nu, TruncatedDensity) else nu
    if not math.isinf(base.hi):
        return math.inf
    hi = 1.0
    while psi_is_finite(triple, hi):
        hi *= 2.0
        if hi > 2.0 ** 60:
            return math.inf
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if psi_is_finite(triple, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class NondegeneracyReport:
    nondegenerate: bool
    witness_eps: Optional[float]
    hypothesis_ok: bool  # psi(-q) < inf for every q in [0, 1]
    scanned_to: float


def check_nondegenerate(triple: LevyTriple, n_scan: int = 481) -> NondegeneracyReport:
    """Scan zeta on (1, min(q_c, 3)] for a witness zeta(1+eps) > 1.

    Also reports whether psi(-q) is finite for all q in [0, 1] (the
    negative-moment hypothesis of the dimension-change theorem).
    """
    q_c = critical_moment(triple)
    if not q_c > 1.0:
        raise ValidationError(f"nondegeneracy scan needs q_c > 1, got q_c={q_c}")
    q_hi = min(q_c, 3.0)
    witness = None
    qs = np.linspace(1.0, q_hi, n_scan)[1:]
    for q in qs:
        z = zeta(triple, float(q))
        if math.isfinite(z) and z > 1.0:
            witness = float(q - 1.0)
            break
    hypothesis_ok = psi_is_finite(triple, -1.0)
    return NondegeneracyReport(
        nondegenerate=witness is not None,
        witness_eps=witness,
        hypothesis_ok=hypothesis_ok,
        scanned_to=float(q_hi),
    )


# ---------------------------------------------------------------------------
# tabulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentTable:
    """Sampled psi/zeta values on a sorted q-grid, with q_c.

    Construction re-checks the defining identity zeta = q - psi and the
    concavity of zeta (chord test, tolerance 1e-9) on the finite region.
    """

    qs: np.ndarray
    psi_vals: np.ndarray
    zeta_vals: np.ndarray
    q_c: float

    def __post_init__(self):
        qs, ps, zs = self.qs, self.psi_vals, self.zeta_vals
        if not (len(qs) == len(ps) == len(zs)):
            raise ValidationError("table columns must have equal length")
        if np.any(np.diff(qs) <= 0.0):
            raise ValidationError("q grid must be strictly increasing")
        fin = np.isfinite(zs)
        if not np.allclose(zs[fin], qs[fin] - ps[fin], rtol=0.0, atol=1e-12):
            raise ValidationError("zeta column must equal q - psi")
        qf, zf = qs[fin], zs[fin]
        for i in range(len(qf) - 2):
            q1, q2, q3 = qf[i], qf[i + 1], qf[i + 2]
            chord = zf[i] + (zf[i + 2] - zf[i]) * (q2 - q1) / (q3 - q1)
            if zf[i + 1] < chord - 1e-9:
                raise ValidationError(
                    f"zeta fails concavity at q={q2}: value {zf[i+1]} below chord {chord}"
                )


def exponent_table(triple: LevyTriple, qs: Sequence[float]) -> ExponentTable:
    qs = np.asarray(sorted(float(q) for q in qs))
    ps = np.array([psi(triple, q) for q in qs])
    zs = np.where(np.isinf(ps), -math.inf, qs - ps)
    return ExponentTable(qs=qs, psi_vals=ps, zeta_vals=zs, q_c=critical_moment(triple))


# ---------------------------------------------------------------------------
# canonical families
# ---------------------------------------------------------------------------

def lognormal_triple(sigma2: float) -> LevyTriple:
    """Pure-Gaussian triple normalized to psi(1)=0: m = -sigma2/2."""
    return normalize(sigma2, None)


def lebesgue_triple() -> LevyTriple:
    """Degenerate triple (0, 0, none): omega = 0, measure = Lebesgue."""
    return LevyTriple(m=0.0, sigma2=0.0, nu=None)


def exponential_jumps(c: float, beta: float, eps: float = 1e-6,
                      x_max: Optional[float] = None) -> DensityJumps:
    """Density c e^{-beta x} on (0, inf); q_c equals beta."""
    if c <= 0.0 or beta <= 0.0:
        raise ValidationError("exponential family needs c > 0 and beta > 0")
    if x_max is None:
        x_max = 60.0 / beta
    return DensityJumps(
        density=lambda x: c * np.exp(-beta * np.asarray(x, dtype=float)),
        lo=0.0, hi=math.inf, eps=eps, x_max=float(x_max),
        pos_rate=beta, label="exponential", params={"c": c, "beta": beta},
    )


def power_small_jumps(c: float, alpha: float, hi: float = 1.0,
                      eps: float = 1e-4) -> DensityJumps:
    """Density c x^{-1-alpha} on (0, hi): infinite activity near 0 for
    alpha in (0, 2), finite x^2 moment, bounded support."""
    if not (0.0 < alpha < 2.0):
        raise ValidationError("alpha must lie in (0, 2) for x^2 integrability")
    if c <= 0.0 or hi <= 0.0:
        raise ValidationError("power family needs c > 0 and hi > 0")
    return DensityJumps(
        density=lambda x: c * np.asarray(x, dtype=float) ** (-1.0 - alpha),
        lo=0.0, hi=float(hi), eps=eps, x_max=float(hi),
        label="power", params={"c": c, "alpha": alpha, "hi": hi},
    )
