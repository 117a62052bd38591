"""Fractal test sets, box-counting dimension estimators, and the 1D
dimension-change (KPZ) verification pipeline.

Hausdorff dimension is estimated by box counting; for the self-similar
test sets used here the two notions coincide.  The dimension of a set
under the random metric rho is computed as the Euclidean box dimension of
its image under the cumulative mass map R(x) = rho(0, x), which is
equivalent to covering the set by rho-balls.
"""

import math
from dataclasses import dataclass, field as dfield
from typing import Callable, Optional, Sequence

import numpy as np

from . import levy
from .cones import ConeParams
from .errors import (
    EstimatorDegenerateError,
    InvalidExponentError,
    NumericalError,
    ValidationError,
)
from .fields import GaussianFieldSampler, check_resolution, sample_field, split_triple, staggered_grid
from .measure import MeasureGrid, build_measure
from .parallel import parallel_map
from .seeding import derive_seed

__all__ = [
    "FractalSet",
    "DimensionEstimate",
    "KpzReport",
    "make_cantor",
    "full_interval",
    "point_set",
    "box_count",
    "box_dimension",
    "rho_image",
    "kpz_solve",
    "kpz_verify_1d",
    "capacity_probe",
    "DYADIC_SCALES",
]

# default relative scale band for box counting: span * 2^-k.  The band was
# fixed by pilot runs: shallower bands inflate the slope (lattice bias),
# deeper ones run into the cover's construction scale.
DYADIC_SCALES = tuple(2.0 ** -k for k in range(4, 12))


@dataclass(frozen=True)
class FractalSet:
    """A finite cover realization of a fractal subset of an interval.

    Intervals are treated as half-open [a, b) for box counting (points are
    zero-length intervals); delta0 is the nominal (self-similarity)
    dimension, NaN when unknown (e.g. for metric images).
    """

    kind: str
    intervals: np.ndarray
    delta0: float
    finest_scale: float
    meta: dict = dfield(default_factory=dict)

    def __post_init__(self):
        iv = np.asarray(self.intervals, dtype=float)
        if iv.ndim != 2 or iv.shape[1] != 2 or iv.shape[0] == 0:
            raise ValidationError("intervals must be a non-empty (k, 2) array")
        if np.any(iv[:, 1] < iv[:, 0]):
            raise ValidationError("intervals must satisfy a <= b")
        object.__setattr__(self, "intervals", iv)

    @property
    def span(self) -> tuple:
        return float(self.intervals[:, 0].min()), float(self.intervals[:, 1].max())


def make_cantor(ratio: float, depth: int, domain_length: float = 1.0) -> FractalSet:
    """Two-branch self-similar set: each interval [a, b] is replaced by its
    left and right sub-intervals of relative length `ratio`.  Nominal
    dimension ln 2 / ln(1/ratio)."""
    if not (0.0 < ratio <= 0.5):
        raise ValidationError("ratio must lie in (0, 1/2]; larger values overlap branches")
    if depth < 1 or depth > 16:
        raise ValidationError("depth must lie in [1, 16]")
    if domain_length <= 0.0:
        raise ValidationError("domain_length must be > 0")
    iv = np.array([[0.0, domain_length]])
    for _ in range(depth):
        width = (iv[:, 1] - iv[:, 0]) * ratio
        left = np.stack([iv[:, 0], iv[:, 0] + width], axis=1)
        right = np.stack([iv[:, 1] - width, iv[:, 1]], axis=1)
        iv = np.concatenate([left, right])
        iv = iv[np.argsort(iv[:, 0])]
    delta0 = 1.0 if ratio == 0.5 else math.log(2.0) / math.log(1.0 / ratio)
    return FractalSet(
        kind="cantor", intervals=iv, delta0=delta0,
        finest_scale=float(ratio ** depth * domain_length),
        meta={"ratio": ratio, "depth": depth, "domain_length": domain_length},
    )


def full_interval(domain_length: float = 1.0) -> FractalSet:
    if domain_length <= 0.0:
        raise ValidationError("domain_length must be > 0")
    return FractalSet(
        kind="interval", intervals=np.array([[0.0, domain_length]]), delta0=1.0,
        finest_scale=0.0, meta={"domain_length": domain_length},
    )


def point_set(points: Sequence[float]) -> FractalSet:
    pts = np.asarray(sorted(float(p) for p in points))
    if pts.size == 0:
        raise ValidationError("need at least one point")
    return FractalSet(
        kind="points", intervals=np.stack([pts, pts], axis=1), delta0=0.0,
        finest_scale=0.0, meta={"n_points": int(pts.size)},
    )


# ---------------------------------------------------------------------------
# box counting
# ---------------------------------------------------------------------------

def box_count(intervals: np.ndarray, eps: float) -> int:
    """Number of grid boxes [k eps, (k+1) eps) meeting the half-open cover.

    Integer boundaries are snapped (1e-9 relative) so exact self-similar
    constructions give exact counts.
    """
    if eps <= 0.0:
        raise ValidationError("box size must be > 0")
    a = intervals[:, 0] / eps
    b = intervals[:, 1] / eps
    k0 = np.floor(a + 1e-9).astype(np.int64)
    k1 = np.ceil(b - 1e-9).astype(np.int64) - 1
    k1 = np.maximum(k1, k0)  # zero-length (point) entries occupy one box
    order = np.argsort(k0)
    k0, k1 = k0[order], k1[order]
    total = 0
    cur_lo, cur_hi = None, None
    for lo, hi in zip(k0, k1):
        if cur_lo is None:
            cur_lo, cur_hi = lo, hi
        elif lo <= cur_hi + 1:
            cur_hi = max(cur_hi, hi)
        else:
            total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = lo, hi
    if cur_lo is not None:
        total += cur_hi - cur_lo + 1
    return int(total)


@dataclass
class DimensionEstimate:
    """Log-log box-count slope with its regression error and R^2."""

    method: str
    scales: np.ndarray
    counts: np.ndarray
    slope: float
    stderr: float
    r2: float

    def __post_init__(self):
        if self.stderr <= 0.0:
            self.stderr = 1e-12
        if self.method in ("euclidean-box", "rho-box") and not (
            -0.05 <= self.slope <= 1.1
        ):
            raise EstimatorDegenerateError(
                f"1D box dimension {self.slope:.4f} outside the sanity band [-0.05, 1.1]"
            )


def box_dimension(fset: FractalSet, scales: Sequence[float],
                  method: str = "euclidean-box") -> DimensionEstimate:
    """Least-squares slope of log N(eps) against log(1/eps).

    Needs >= 4 scales spanning >= 3 octaves, all coarser than the finest
    construction scale of the cover (when that is known).
    """
    eps = np.asarray(sorted(float(e) for e in scales))
    if len(eps) < 4:
        raise ValidationError("need at least 4 scales")
    if np.any(eps <= 0.0):
        raise ValidationError("scales must be > 0")
    if eps[-1] / eps[0] < 8.0 * (1.0 - 1e-9):
        raise ValidationError("scales must span at least 3 octaves")
    if fset.finest_scale > 0.0 and eps[0] < fset.finest_scale * (1.0 - 1e-9):
        raise ValidationError(
            f"scale {eps[0]:g} finer than the finest construction scale "
            f"{fset.finest_scale:g}"
        )
    counts = np.array([box_count(fset.intervals, e) for e in eps], dtype=float)
    x = np.log(1.0 / eps)
    y = np.log(counts)
    n = len(x)
    xbar, ybar = x.mean(), y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    resid = y - (ybar + slope * (x - xbar))
    stderr = math.sqrt(max(float(np.sum(resid ** 2)) / (n - 2), 0.0) / sxx)
    sst = float(np.sum((y - ybar) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / sst if sst > 0.0 else 1.0
    return DimensionEstimate(
        method=method, scales=eps, counts=counts, slope=slope, stderr=stderr, r2=r2
    )


def rho_image(fset: FractalSet, measure: MeasureGrid) -> FractalSet:
    """Image cover {[R(a_i), R(b_i)]} under the cumulative map R(x) = rho(0, x)."""
    img = measure.cumulative_at(fset.intervals)
    return FractalSet(
        kind="rho-image", intervals=img, delta0=math.nan, finest_scale=0.0,
        meta={"source": fset.kind, "source_delta0": fset.delta0},
    )


# ---------------------------------------------------------------------------
# the dimension-change equation
# ---------------------------------------------------------------------------

def kpz_solve(zeta_fn: Callable[[float], float], delta0: float,
              tol: float = 1e-12) -> float:
    """Unique delta in [0, 1] with zeta_fn(delta) = delta0, by bisection.

    Requires zeta_fn(0) = 0 and zeta_fn(1) = 1 (to 1e-9) and monotone
    increase on a 50-point grid.
    """
    if not (0.0 <= delta0 <= 1.0):
        raise ValidationError("delta0 must lie in [0, 1]")
    if abs(zeta_fn(0.0)) > 1e-9 or abs(zeta_fn(1.0) - 1.0) > 1e-9:
        raise InvalidExponentError("zeta must satisfy zeta(0)=0 and zeta(1)=1")
    samples = [zeta_fn(q) for q in np.linspace(0.0, 1.0, 50)]
    if np.any(np.diff(samples) <= -1e-12):
        raise InvalidExponentError("zeta is not monotone increasing on [0, 1]")
    if delta0 == 0.0:
        return 0.0
    if delta0 == 1.0:
        return 1.0
    # bit-exact answer when delta0 is itself a root at tolerance (identity
    # exponent of the Lebesgue model)
    if abs(zeta_fn(delta0) - delta0) <= tol:
        return delta0
    lo, hi = 0.0, 1.0
    mid = 0.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = zeta_fn(mid)
        if abs(val - delta0) <= tol:
            return mid
        if val < delta0:
            lo = mid
        else:
            hi = mid
    if abs(zeta_fn(mid) - delta0) > tol:
        raise NumericalError("bisection failed to reach the requested tolerance")
    return mid


@dataclass
class KpzReport:
    """Replica-aggregated comparison of the measured rho-dimension against
    the analytic root of zeta(delta) = delta0."""

    set_kind: str
    delta0: float
    delta_pred: float
    euclid: DimensionEstimate
    estimates: np.ndarray
    mean: float
    stderr: float
    replicas: int
    discarded: int
    tolerance: float
    passed: bool
    within_hypotheses: bool = True
    rows: Optional[list] = None  # (replica, estimate, stderr, discarded 0/1)

    @property
    def discard_fraction(self) -> float:
        return self.discarded / self.replicas if self.replicas else 0.0


def kpz_verify_1d(fset: FractalSet, triple: levy.LevyTriple, cone: ConeParams,
                  replicas: int, seed: int,
                  scales: Sequence[float] = DYADIC_SCALES,
                  resolution_factor: int = 4,
                  tolerance: float = 0.08,
                  threads: int = 1) -> KpzReport:
    """Monte Carlo check that the box dimension of the rho-image of a
    deterministic set solves zeta(delta) = delta0.

    `scales` are relative box sizes: applied to the domain length for the
    Euclidean estimate and to each replica's image span for the rho-side
    estimate.  Replicas with degenerate total mass (< 1e-12 * domain) or
    out-of-band slopes are discarded and counted; the run fails if more
    than 5% are discarded.
    """
    nd = levy.check_nondegenerate(triple)
    if not nd.nondegenerate:
        raise ValidationError("triple is degenerate: zeta(1+eps) never exceeds 1")
    if not math.isfinite(fset.delta0):
        raise ValidationError("the target set needs a known nominal dimension")
    L = cone.T
    lo, hi = fset.span
    if lo < -1e-12 or hi > L * (1.0 + 1e-12):
        raise ValidationError("the set must lie inside [0, T]")
    scales = np.asarray(sorted(float(s) for s in scales))
    if np.any((scales <= 0.0) | (scales >= 1.0)):
        raise ValidationError("relative scales must lie in (0, 1)")
    delta_pred = kpz_solve(triple.zeta_fn(), fset.delta0)
    euclid = box_dimension(fset, scales * L, method="euclidean-box")

    n = int(math.ceil(L / (cone.l / resolution_factor)))
    if n > 8192:
        raise ValidationError(f"grid of {n} points exceeds the 8192 dense cap")
    grid = staggered_grid(L, n)
    sim, _ = split_triple(triple)
    sampler = GaussianFieldSampler(grid, cone, sim) if sim.nu is None else None

    def one_replica(i: int):
        rep_seed = derive_seed(seed, "kpz-replica", i)
        if sampler is not None:
            fld = sampler.sample(rep_seed)
        else:
            fld = sample_field(grid, cone, sim, rep_seed)
        mg = build_measure(fld)
        if mg.total_mass < 1e-12 * L:
            return None
        img = rho_image(fset, mg)
        s_lo, s_hi = img.span
        span = s_hi - s_lo
        if span <= 0.0:
            return None
        try:
            est = box_dimension(img, scales * span, method="rho-box")
        except EstimatorDegenerateError:
            return None
        return est.slope, est.stderr

    results = parallel_map(one_replica, range(replicas), threads)
    rows = []
    estimates = []
    discarded = 0
    for i, res in enumerate(results):
        if res is None:
            discarded += 1
            rows.append((i, math.nan, math.nan, 1))
        else:
            estimates.append(res[0])
            rows.append((i, res[0], res[1], 0))
    estimates = np.asarray(estimates)
    if estimates.size == 0:
        raise EstimatorDegenerateError("every replica was discarded")
    mean = float(estimates.mean())
    stderr = float(estimates.std(ddof=1) / math.sqrt(estimates.size)) if estimates.size > 1 else 1e-12
    run_ok = discarded <= 0.05 * replicas
    passed = run_ok and abs(mean - delta_pred) <= max(tolerance, 3.0 * stderr)
    return KpzReport(
        set_kind=fset.kind, delta0=fset.delta0, delta_pred=delta_pred,
        euclid=euclid, estimates=estimates, mean=mean, stderr=stderr,
        replicas=replicas, discarded=discarded, tolerance=tolerance,
        passed=passed, within_hypotheses=nd.hypothesis_ok, rows=rows,
    )


# ---------------------------------------------------------------------------
# Frostman capacity probe
# ---------------------------------------------------------------------------

def _sample_natural(fset: FractalSet, rng: np.random.Generator, n: int) -> np.ndarray:
    if fset.kind == "cantor":
        ratio = fset.meta["ratio"]
        depth = fset.meta["depth"]
        L = fset.meta["domain_length"]
        x = np.zeros(n)
        width = L
        for _ in range(depth):
            bits = rng.integers(0, 2, n)
            x += bits * (1.0 - ratio) * width
            width *= ratio
        return x + rng.random(n) * width
    if fset.kind == "interval":
        return rng.random(n) * fset.meta["domain_length"]
    raise ValidationError(
        f"no natural continuous sampling measure for set kind '{fset.kind}'"
    )


def capacity_probe(fset: FractalSet, s: float, n_samples: int, seed: int) -> float:
    """Monte Carlo estimate of the s-energy integral
    E |x - y|^{-s} under the set's natural self-similar measure.

    Finite for s below the set dimension; the estimate grows without bound
    with n_samples above it (a trend report, not a sharp test).  Coincident
    pairs are resampled.
    """
    if n_samples < 1:
        raise ValidationError("need at least one sample pair")
    if s < 0.0:
        raise ValidationError("s must be >= 0")
    if s == 0.0:
        return 1.0
    rng = np.random.default_rng(derive_seed(seed, "capacity"))
    x = _sample_natural(fset, rng, n_samples)
    y = _sample_natural(fset, rng, n_samples)
    for _ in range(100):
        coincident = x == y
        if not np.any(coincident):
            break
        k = int(coincident.sum())
        y[coincident] = _sample_natural(fset, rng, k)
    return float(np.mean(np.abs(x - y) ** (-s)))
