"""2D log-normal multifractal measures and the Gaussian free field chaos
on a disk: kernels, exact Gaussian sampling, ball/box masses,
measure-weighted Hausdorff content, and the 2D dimension-change checks.

The log-normal kernel is the piecewise covariance

    k(x, y) = gamma2 (ln(R/l) + 2 (1 - sqrt(d/l)))   d = |x-y| <= l
            = gamma2 ln+(R/d)                         d > l,

continuous across d = l.  The free-field kernel is gamma2 times the disk
Green function, by the closed image-point formula

    G_R(x, y) = ln( |x - y*| |y| / (R |x - y|) ),  y* = R^2 y / |y|^2,

whose diagonal singularity is exactly ln(1/|x-y|) + bounded; Gram
diagonals use cell-averaged values so the chaos normalization stays
finite.  The 2D structure function used for predictions is

    zeta2d(q) = (2 + gamma2) q - gamma2 q^2 / 2.
"""

import math
from dataclasses import dataclass, field as dfield
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import (
    EstimatorDegenerateError,
    InvalidExponentError,
    NumericalError,
    RangeError,
    ValidationError,
)
from .fields import _cholesky_with_jitter
from .fractal import DimensionEstimate, KpzReport
from .parallel import parallel_map
from .seeding import derive_seed

__all__ = [
    "Grid2D",
    "Kernel2D",
    "Field2D",
    "Measure2D",
    "FractalSet2D",
    "lognormal_kernel",
    "zeta2d",
    "green_disk",
    "lognormal_kernel2d",
    "gff_kernel2d",
    "sample_field2d",
    "build_measure2d",
    "ball_mass",
    "ball_mass_scaling_check",
    "sandwich_check",
    "green_harmonicity_residual",
    "full_square",
    "make_dust",
    "measure_hausdorff_content",
    "critical_exponent",
    "kpz_solve_2d",
    "kpz_verify_2d",
]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def zeta2d(gamma2: float, q) -> float:
    """(2 + gamma2) q - (gamma2/2) q^2."""
    q = np.asarray(q, dtype=float)
    out = (2.0 + gamma2) * q - 0.5 * gamma2 * q * q
    return float(out) if out.ndim == 0 else out


def _pair_dist(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sqrt(np.sum((x - y) ** 2, axis=-1))


def lognormal_kernel(x, y, l: float, gamma2: float, R: float):
    """Piecewise covariance of the regularized 2D log-normal field."""
    if not (0.0 < l <= R):
        raise ValidationError("need 0 < l <= R")
    _check_gamma2(gamma2)
    d = _pair_dist(x, y)
    near = gamma2 * (math.log(R / l) + 2.0 * (1.0 - np.sqrt(np.minimum(d, l) / l)))
    with np.errstate(divide="ignore"):
        far = gamma2 * np.maximum(np.log(R / np.maximum(d, np.finfo(float).tiny)), 0.0)
    out = np.where(d <= l, near, far)
    return float(out) if out.ndim == 0 else out


def _check_gamma2(gamma2: float):
    if not (0.0 <= gamma2 < 4.0):
        raise ValidationError("gamma2 must lie in [0, 4)")


def green_disk(x, y, R: float):
    """Green function of the disk B(0, R) normalized so the diagonal
    singularity is exactly ln(1/|x - y|): image-point formula
    ln(|x - y*| |y| / (R |x - y|)) with the y -> 0 limit ln(R/|x|)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = np.sqrt(np.sum(x ** 2, axis=-1))
    ry = np.sqrt(np.sum(y ** 2, axis=-1))
    if np.any(rx >= R) or np.any(ry >= R):
        raise RangeError("both points must lie in the open disk")
    d = _pair_dist(x, y)
    if np.any(d == 0.0):
        raise ValidationError("green_disk is singular on the diagonal")
    # |x - R^2 y / |y|^2| * |y| stays smooth as y -> 0: it equals
    # sqrt(|x|^2 |y|^2 - 2 R^2 <x, y> + R^4).
    dot = np.sum(x * y, axis=-1)
    num = np.sqrt(np.maximum((rx * ry) ** 2 - 2.0 * R ** 2 * dot + R ** 4, 0.0))
    out = np.log(num / (R * d))
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=1)
def _unit_square_log_constant() -> float:
    """-E[ln |U - V|] for U, V independent uniform on the unit square."""
    val, err = integrate.dblquad(
        lambda yy, xx: 0.5 * math.log(xx * xx + yy * yy) * (1.0 - xx) * (1.0 - yy),
        0.0, 1.0, 0.0, 1.0, epsabs=1e-12, epsrel=1e-10,
    )
    if err > 1e-8:
        raise NumericalError("unit-square log-distance constant did not converge")
    return -4.0 * val


@dataclass(frozen=True)
class Kernel2D:
    """Evaluation kernel for 2D Gaussian log-fields.

    kind 'lognormal-mrm' takes (gamma2, R, l); kind 'gff-disk' takes
    (gamma2, R, cell_h), where cell_h is the grid cell side used to
    regularize the Gram diagonal by cell averaging.
    """

    kind: str
    gamma2: float
    R: float
    l: float = 0.0
    cell_h: float = 0.0

    def __post_init__(self):
        _check_gamma2(self.gamma2)
        if self.R <= 0.0:
            raise ValidationError("R must be > 0")
        if self.kind == "lognormal-mrm":
            if not (0.0 < self.l <= self.R):
                raise ValidationError("lognormal kernel needs 0 < l <= R")
        elif self.kind == "gff-disk":
            if not (0.0 < self.cell_h < self.R):
                raise ValidationError("gff kernel needs 0 < cell_h < R")
        else:
            raise ValidationError(f"unknown kernel kind '{self.kind}'")

    def __call__(self, x, y):
        if self.kind == "lognormal-mrm":
            return lognormal_kernel(x, y, self.l, self.gamma2, self.R)
        return self.gamma2 * green_disk(x, y, self.R)

    def variance(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "lognormal-mrm":
            return np.full(len(points), self.gamma2 * (math.log(self.R / self.l) + 2.0))
        r2 = np.sum(points ** 2, axis=-1)
        if np.any(r2 >= self.R ** 2):
            raise RangeError("gff grid points must lie in the open disk")
        reg = np.log((self.R ** 2 - r2) / self.R)
        var = self.gamma2 * (reg + math.log(1.0 / self.cell_h) + _unit_square_log_constant())
        if np.any(var <= 0.0):
            raise ValidationError(
                "cell-averaged gff variance went non-positive; keep the grid "
                "away from the boundary or refine it"
            )
        return var

    def gram(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        if n > 4096:
            raise ValidationError("dense 2D Gram capped at 4096 points (64 x 64)")
        g = np.empty((n, n))
        if self.kind == "lognormal-mrm":
            for i in range(n):
                g[i] = lognormal_kernel(points[i], points, self.l, self.gamma2, self.R)
        else:
            for i in range(n):
                row = np.empty(n)
                mask = np.arange(n) != i
                row[mask] = self.gamma2 * green_disk(points[i], points[mask], self.R)
                g[i] = row
            np.fill_diagonal(g, self.variance(points))
        return 0.5 * (g + g.T)


def lognormal_kernel2d(gamma2: float, R: float, l: float) -> Kernel2D:
    return Kernel2D(kind="lognormal-mrm", gamma2=gamma2, R=R, l=l)


def gff_kernel2d(gamma2: float, R: float, cell_h: float) -> Kernel2D:
    return Kernel2D(kind="gff-disk", gamma2=gamma2, R=R, cell_h=cell_h)


# ---------------------------------------------------------------------------
# grids, fields, measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid2D:
    """n x n cell centers tiling the square [x0, x0+side] x [y0, y0+side]."""

    x0: float
    y0: float
    side: float
    n: int

    def __post_init__(self):
        if self.n < 1 or self.side <= 0.0:
            raise ValidationError("grid needs n >= 1 and side > 0")

    @property
    def h(self) -> float:
        return self.side / self.n

    def centers(self) -> np.ndarray:
        c = (np.arange(self.n) + 0.5) * self.h
        xx, yy = np.meshgrid(self.x0 + c, self.y0 + c, indexing="xy")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def cell_area(self) -> float:
        return self.h * self.h


@dataclass
class Field2D:
    grid: Grid2D
    values: np.ndarray  # flat, len n*n
    kernel: Kernel2D
    seed: int
    method: str = "gaussian-exact"

    def __post_init__(self):
        if len(self.values) != self.grid.n ** 2:
            raise ValidationError("field length must match the grid")


@dataclass
class Measure2D:
    grid: Grid2D
    masses: np.ndarray  # flat, len n*n, >= 0; masked cells carry 0
    mask: Optional[np.ndarray] = None
    field: Optional[Field2D] = None

    def __post_init__(self):
        if np.any(self.masses < 0.0):
            raise ValidationError("cell masses must be >= 0")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def masses_square(self) -> np.ndarray:
        return self.masses.reshape(self.grid.n, self.grid.n)


class Field2DSampler:
    """Factor the kernel Gram once over a grid, then draw replicas."""

    def __init__(self, grid: Grid2D, kernel: Kernel2D):
        self.grid = grid
        self.kernel = kernel
        pts = grid.centers()
        self.points = pts
        self.var = kernel.variance(pts)
        self.chol = _cholesky_with_jitter(kernel.gram(pts))

    def draw(self, seed: int) -> np.ndarray:
        z = np.random.default_rng(int(seed)).standard_normal(len(self.points))
        return self.chol @ z

    def sample(self, seed: int) -> Field2D:
        return Field2D(grid=self.grid, values=self.draw(seed), kernel=self.kernel,
                       seed=int(seed))


def sample_field2d(grid: Grid2D, kernel: Kernel2D, seed: int) -> Field2D:
    """Mean-zero Gaussian field on the grid centers with the kernel's Gram
    matrix; deterministic per seed."""
    return Field2DSampler(grid, kernel).sample(seed)


def build_measure2d(field: Field2D, mask: Optional[np.ndarray] = None) -> Measure2D:
    """Cell masses e^{X - Var[X]/2} * h^2, zero outside the mask."""
    var = field.kernel.variance(field.grid.centers())
    masses = np.exp(field.values - 0.5 * var) * field.grid.cell_area()
    if mask is not None:
        masses = np.where(mask, masses, 0.0)
    return Measure2D(grid=field.grid, masses=masses, mask=mask, field=field)


def disk_mask(grid: Grid2D, radius: float, center=(0.0, 0.0)) -> np.ndarray:
    pts = grid.centers()
    return np.sum((pts - np.asarray(center)) ** 2, axis=1) <= radius ** 2


def ball_mass(measure: Measure2D, center, radius: float) -> float:
    pts = measure.grid.centers()
    inside = np.sum((pts - np.asarray(center, dtype=float)) ** 2, axis=1) <= radius ** 2
    return float(measure.masses[inside].sum())


# ---------------------------------------------------------------------------
# ball-mass moment scaling
# ---------------------------------------------------------------------------

@dataclass
class BallScalingReport:
    lam: float
    q: float
    observed_ratio: float
    predicted_ratio: float
    log_se: float
    z: float
    passed: bool
    n_rep: int


def ball_mass_scaling_check(gamma2: float, R: float, l: float, lam: float, q: float,
                            replicas: int, seed: int, n: int = 64) -> BallScalingReport:
    """Monte Carlo test of E[M(B(0, lam R))^q] = lam^{zeta2d(q)} E[M(B(0, R))^q].

    The small ball is simulated at resolution lam*l on the lam-scaled grid
    (the law-exact rescaling), so the measured ratio is free of
    discretization bias and the test is a pure two-sample z-test at 5
    standard errors on the log ratio.
    """
    if not (0.0 < lam <= 1.0):
        raise ValidationError("lambda must lie in (0, 1]")
    if not (0.0 <= q <= 1.0):
        raise ValidationError("q must lie in [0, 1] for the ball-moment identity")
    grid_big = Grid2D(x0=-R, y0=-R, side=2.0 * R, n=n)
    if lam * R < 16.0 * grid_big.h * (1.0 - 1e-12):
        raise ValidationError("under-resolved ball: need lam R >= 16 grid spacings")
    grid_small = Grid2D(x0=-lam * R, y0=-lam * R, side=2.0 * lam * R, n=n)
    k_big = lognormal_kernel2d(gamma2, R, l)
    k_small = lognormal_kernel2d(gamma2, R, lam * l)
    samp_big = Field2DSampler(grid_big, k_big)
    samp_small = Field2DSampler(grid_small, k_small)
    pb = np.empty(replicas)
    ps = np.empty(replicas)
    for i in range(replicas):
        mb = build_measure2d(
            Field2D(grid_big, samp_big.draw(derive_seed(seed, "big", i)), k_big, seed)
        )
        ms = build_measure2d(
            Field2D(grid_small, samp_small.draw(derive_seed(seed, "small", i)), k_small, seed)
        )
        pb[i] = ball_mass(mb, (0.0, 0.0), R) ** q
        ps[i] = ball_mass(ms, (0.0, 0.0), lam * R) ** q
    ratio = float(ps.mean() / pb.mean())
    predicted = float(lam ** zeta2d(gamma2, q))
    rng = np.random.default_rng(derive_seed(seed, "boot"))
    boots = np.empty(200)
    for b in range(200):
        idx = rng.integers(0, replicas, replicas)
        boots[b] = math.log(ps[idx].mean() / pb[idx].mean())
    se = float(boots.std(ddof=1))
    zscore = (math.log(ratio) - math.log(predicted)) / se if se > 0.0 else 0.0
    return BallScalingReport(
        lam=lam, q=q, observed_ratio=ratio, predicted_ratio=predicted,
        log_se=se, z=float(zscore), passed=abs(zscore) <= 5.0, n_rep=replicas,
    )


# ---------------------------------------------------------------------------
# Green-function diagnostics
# ---------------------------------------------------------------------------

def green_harmonicity_residual(x, y, R: float, step: Optional[float] = None) -> float:
    """R^2-scaled 5-point discrete Laplacian of G(., y) at x; near zero for
    a harmonic function (up to O(step^2) truncation)."""
    x = np.asarray(x, dtype=float)
    h = 1e-3 * R if step is None else step
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    lap = (
        green_disk(x + e1, y, R) + green_disk(x - e1, y, R)
        + green_disk(x + e2, y, R) + green_disk(x - e2, y, R)
        - 4.0 * green_disk(x, y, R)
    ) / (h * h)
    return float(lap * R * R)


@dataclass
class SandwichReport:
    diff_min: float
    diff_max: float
    cauchy_increments: np.ndarray
    limit_estimate: float
    passed: bool


def sandwich_check(gamma2: float, R: float, r: float, delta: float,
                   grid_n: int = 12, k_range=range(4, 15)) -> SandwichReport:
    """Bound gamma2*G_R - gamma2*ln+(R/d) over pairs in B(0, r + delta).

    The log singularities must cancel: the difference stays finite with a
    bounded spread (estimates of the sandwich constants), and along
    d = 2^-k R the difference sequence is Cauchy (increment <= 1e-3 by
    k = 14).
    """
    if not (r + delta < R):
        raise ValidationError("need r + delta < R")
    _check_gamma2(gamma2)
    a = (r + delta) / math.sqrt(2.0) * 0.999
    axis = np.linspace(-a, a, grid_n)
    xx, yy = np.meshgrid(axis, axis)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    diffs = []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = _pair_dist(pts[i], pts[j])
            g = gamma2 * green_disk(pts[i], pts[j], R)
            ref = gamma2 * max(math.log(R / d), 0.0)
            diffs.append(g - ref)
    diffs = np.asarray(diffs)
    if not np.all(np.isfinite(diffs)):
        raise NumericalError("sandwich difference is not finite")
    base = np.array([0.3 * r, 0.2 * r])
    seq = []
    for k in k_range:
        d = 2.0 ** -k * R
        other = base + np.array([d, 0.0])
        g = gamma2 * green_disk(base, other, R)
        ref = gamma2 * max(math.log(R / d), 0.0)
        seq.append(g - ref)
    seq = np.asarray(seq)
    inc = np.abs(np.diff(seq))
    passed = bool(np.all(np.isfinite(seq)) and inc[-1] <= 1e-3)
    return SandwichReport(
        diff_min=float(diffs.min()), diff_max=float(diffs.max()),
        cauchy_increments=inc, limit_estimate=float(seq[-1]), passed=passed,
    )


# ---------------------------------------------------------------------------
# 2D fractal sets and measure-weighted content
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FractalSet2D:
    """Rectangle-cover realization of a planar set inside a square domain."""

    kind: str
    rects: np.ndarray  # (k, 4): x0, x1, y0, y1
    delta0: float
    square: tuple  # (x0, y0, side)
    meta: dict = dfield(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.rects, dtype=float)
        if r.ndim != 2 or r.shape[1] != 4 or r.shape[0] == 0:
            raise ValidationError("rects must be a non-empty (k, 4) array")
        object.__setattr__(self, "rects", r)

    def max_radius(self, center=(0.0, 0.0)) -> float:
        cx, cy = center
        xs = np.concatenate([self.rects[:, 0], self.rects[:, 1]]) - cx
        ys = np.concatenate([self.rects[:, 2], self.rects[:, 3]]) - cy
        corner_x = np.abs(xs).max()
        corner_y = np.abs(ys).max()
        return math.hypot(corner_x, corner_y)


def full_square(square: tuple) -> FractalSet2D:
    x0, y0, side = square
    return FractalSet2D(
        kind="full-square",
        rects=np.array([[x0, x0 + side, y0, y0 + side]]),
        delta0=2.0, square=tuple(square), meta={},
    )


def make_dust(ratio: float, depth: int, square: tuple) -> FractalSet2D:
    """Product of two identical two-branch self-similar sets on the square;
    nominal dimension 2 ln 2 / ln(1/ratio)."""
    from .fractal import make_cantor

    x0, y0, side = square
    c = make_cantor(ratio, depth, side)
    iv = c.intervals
    k = len(iv)
    if k * k > 65536:
        raise ValidationError("dust cover too large; lower the depth")
    xs = np.repeat(iv, k, axis=0)
    ys = np.tile(iv, (k, 1))
    rects = np.stack([x0 + xs[:, 0], x0 + xs[:, 1], y0 + ys[:, 0], y0 + ys[:, 1]], axis=1)
    return FractalSet2D(
        kind="dust", rects=rects, delta0=2.0 * c.delta0, square=tuple(square),
        meta={"ratio": ratio, "depth": depth, "finest_scale": c.finest_scale},
    )


def _meets_mask(kset: FractalSet2D, grid: Grid2D) -> np.ndarray:
    """Boolean (n, n) mask of finest-level cells whose half-open square
    meets the rectangle cover."""
    n = grid.n
    h = grid.h
    mask = np.zeros((n, n), dtype=bool)
    for x0r, x1r, y0r, y1r in kset.rects:
        i0 = int(np.floor((x0r - grid.x0) / h + 1e-9))
        i1 = int(np.ceil((x1r - grid.x0) / h - 1e-9)) - 1
        j0 = int(np.floor((y0r - grid.y0) / h + 1e-9))
        j1 = int(np.ceil((y1r - grid.y0) / h - 1e-9)) - 1
        i1, j1 = max(i1, i0), max(j1, j0)
        i0c, i1c = max(i0, 0), min(i1, n - 1)
        j0c, j1c = max(j0, 0), min(j1, n - 1)
        if i1c >= i0c and j1c >= j0c:
            mask[j0c:j1c + 1, i0c:i1c + 1] = True
    return mask


def _pool(a: np.ndarray, block: int, how: str) -> np.ndarray:
    n = a.shape[0] // block
    r = a.reshape(n, block, n, block)
    if how == "sum":
        return r.sum(axis=(1, 3))
    return r.any(axis=(1, 3))


def measure_hausdorff_content(kset: FractalSet2D, measure: Measure2D, s: float,
                              levels: Sequence[int]) -> dict:
    """Per-level weighted cover sums S_n(s) = sum over level-n dyadic
    squares meeting K of (square mass)^s.

    Level n splits the measure's domain square into 2^n x 2^n squares; the
    grid side must be a power of two at least as fine as the deepest level.
    At s = 0 the sum is the plain box count.
    """
    n_grid = measure.grid.n
    m = int(round(math.log2(n_grid)))
    if 2 ** m != n_grid:
        raise ValidationError("content sums need a power-of-two grid")
    levels = sorted(int(v) for v in levels)
    if levels[0] < 1 or levels[-1] > m:
        raise ValidationError(f"levels must lie in [1, {m}]")
    cell_mass = measure.masses_square()
    cell_meets = _meets_mask(kset, measure.grid)
    out = {}
    for lev in levels:
        block = 2 ** (m - lev)
        sq_mass = _pool(cell_mass, block, "sum")
        sq_meets = _pool(cell_meets, block, "any")
        masses = sq_mass[sq_meets]
        if s == 0.0:
            out[lev] = float(sq_meets.sum())
        else:
            out[lev] = float(np.sum(masses ** s))
    return out


def _content_slope(kset: FractalSet2D, measure: Measure2D, s: float,
                   levels: Sequence[int]) -> float:
    sums = measure_hausdorff_content(kset, measure, s, levels)
    vals = np.array([sums[v] for v in levels])
    if np.any(vals <= 0.0):
        raise EstimatorDegenerateError("content sum vanished at some level")
    x = np.asarray(levels, dtype=float)
    y = np.log2(vals)
    return float(np.polyfit(x, y, 1)[0])


def critical_exponent(kset: FractalSet2D, measure: Measure2D, levels: Sequence[int],
                      resolution: float = 1e-3, s_cap: float = 4.0) -> float:
    """The s at which the regression slope of log2 S_n(s) against n changes
    sign, located by bisection to the requested resolution."""
    lo = 0.0
    slope_lo = _content_slope(kset, measure, lo, levels)
    if slope_lo <= 0.0:
        raise EstimatorDegenerateError("box-count slope non-positive at s = 0")
    hi = 1.0
    while _content_slope(kset, measure, hi, levels) > 0.0:
        hi *= 2.0
        if hi > s_cap:
            raise EstimatorDegenerateError("failed to bracket the critical exponent")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _content_slope(kset, measure, mid, levels) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# the 2D dimension-change equation
# ---------------------------------------------------------------------------

_MAGIC2D = b"MRM2"
_METHOD_BYTES = 24


def write_field2d(field: Field2D, path: str):
    """2D dump mirroring the 1D layout with a shape header: nx, ny, l (or
    cell_h for the gff kernel), R, seed, method; payload row-major float64."""
    import struct

    k = field.kernel
    scale = k.l if k.kind == "lognormal-mrm" else k.cell_h
    method = f"{field.method}/{k.kind}".encode("ascii")[: _METHOD_BYTES]
    with open(path, "wb") as fh:
        fh.write(_MAGIC2D)
        fh.write(struct.pack("<QQddQ", field.grid.n, field.grid.n, scale, k.R,
                             field.seed & (2 ** 64 - 1)))
        fh.write(method.ljust(_METHOD_BYTES, b"\x00"))
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())


def read_field2d(path: str) -> dict:
    import struct

    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC2D:
            raise ValidationError(f"{path} is not a 2D field dump")
        nx, ny, scale, R, seed = struct.unpack("<QQddQ", fh.read(40))
        method = fh.read(_METHOD_BYTES).rstrip(b"\x00").decode("ascii")
        values = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8").copy()
    if len(values) != nx * ny:
        raise ValidationError(f"{path}: truncated payload")
    return {"nx": nx, "ny": ny, "scale": scale, "R": R, "seed": seed,
            "method": method, "values": values}


def kpz_solve_2d(gamma2: float, delta0: float, tol: float = 1e-12) -> float:
    """Root of zeta2d(gamma2, delta) = delta0 on the increasing branch
    [0, min(1, argmax zeta2d)], by bisection."""
    _check_gamma2(gamma2)
    if not (0.0 <= delta0 <= 2.0):
        raise ValidationError("delta0 must lie in [0, 2]")
    q_hi = 1.0 if gamma2 == 0.0 else min(1.0, (2.0 + gamma2) / gamma2)
    top = zeta2d(gamma2, q_hi)
    if delta0 > top + 1e-12:
        raise InvalidExponentError(
            f"delta0={delta0} exceeds zeta2d({q_hi})={top}: outside the increasing branch"
        )
    lo, hi = 0.0, q_hi
    mid = 0.5 * q_hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        val = zeta2d(gamma2, mid)
        if abs(val - delta0) <= tol:
            return mid
        if val < delta0:
            lo = mid
        else:
            hi = mid
    return mid


def kpz_verify_2d(kset: FractalSet2D, kernel: Kernel2D, replicas: int, seed: int,
                  grid: Grid2D, levels: Sequence[int] = (3, 4, 5, 6),
                  tolerance: float = 0.1,
                  gff_r: Optional[float] = None,
                  threads: int = 1) -> KpzReport:
    """Monte Carlo check that the measure-weighted critical exponent of a
    deterministic planar set solves zeta2d(delta) = delta0.

    For the gff-disk kernel the set must sit inside B(0, gff_r) with
    gff_r < R.  Replicas whose critical exponent cannot be bracketed or
    whose measure degenerates are discarded and counted; > 5% discarded
    fails the run.
    """
    if kernel.kind == "gff-disk":
        if gff_r is None or not (gff_r < kernel.R):
            raise ValidationError("gff verification needs gff_r < R")
        if kset.max_radius() > gff_r * (1.0 + 1e-12):
            raise ValidationError("the set must lie inside B(0, gff_r)")
    delta_pred = kpz_solve_2d(kernel.gamma2, kset.delta0)
    sampler = Field2DSampler(grid, kernel)
    mask = None
    # Euclidean box-count slope over the same levels (informational)
    uniform = Measure2D(grid=grid, masses=np.full(grid.n ** 2, grid.cell_area()))
    levels = sorted(int(v) for v in levels)
    counts = measure_hausdorff_content(kset, uniform, 0.0, levels)
    xs = np.asarray(levels, dtype=float)
    ys = np.log2(np.array([counts[v] for v in levels]))
    eslope, eicept = np.polyfit(xs, ys, 1)
    resid = ys - (eicept + eslope * xs)
    sst = float(np.sum((ys - ys.mean()) ** 2))
    euclid = DimensionEstimate(
        method="euclidean-box2d", scales=grid.side * 2.0 ** -xs,
        counts=np.array([counts[v] for v in levels]), slope=float(eslope),
        stderr=max(float(np.sqrt(np.sum(resid ** 2) / max(len(xs) - 2, 1)
                                 / np.sum((xs - xs.mean()) ** 2))), 1e-12),
        r2=1.0 - float(np.sum(resid ** 2)) / sst if sst > 0.0 else 1.0,
    )
    area = grid.side ** 2
    resolution = 1e-3

    def one_replica(i: int):
        fld = sampler.sample(derive_seed(seed, "kpz2d", i))
        m2 = build_measure2d(fld, mask=mask)
        if m2.total_mass < 1e-12 * area:
            return None
        try:
            return critical_exponent(kset, m2, levels, resolution=resolution)
        except EstimatorDegenerateError:
            return None

    results = parallel_map(one_replica, range(replicas), threads)
    rows = []
    estimates = []
    discarded = 0
    for i, res in enumerate(results):
        if res is None:
            discarded += 1
            rows.append((i, math.nan, math.nan, 1))
        else:
            estimates.append(res)
            rows.append((i, res, resolution / 2.0, 0))
    estimates = np.asarray(estimates)
    if estimates.size == 0:
        raise EstimatorDegenerateError("every replica was discarded")
    mean = float(estimates.mean())
    stderr = float(estimates.std(ddof=1) / math.sqrt(estimates.size)) if estimates.size > 1 else 1e-12
    run_ok = discarded <= 0.05 * replicas
    passed = run_ok and abs(mean - delta_pred) <= max(tolerance, 3.0 * stderr)
    return KpzReport(
        set_kind=kset.kind, delta0=kset.delta0, delta_pred=delta_pred,
        euclid=euclid, estimates=estimates, mean=mean, stderr=stderr,
        replicas=replicas, discarded=discarded, tolerance=tolerance,
        passed=passed, within_hypotheses=True, rows=rows,
    )
