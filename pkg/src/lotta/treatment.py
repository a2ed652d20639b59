"""Piecewise-linear treatment probability model.

The take-up probability is modelled as two increasing connected linear pieces
on each side of the cutoff ``c`` with a jump of size ``j`` at ``c``.  The
coefficient constraint system keeps the induced function nondecreasing and
inside [0, 1] for every admissible draw, so the prior can be expressed as a
chain of conditional uniforms sampled in a fixed order:

    a2l -> b2l -> a1l -> (b1l derived) -> a1r -> (b1r derived)
        -> a2r -> (b2r derived)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class InfeasibleParams(ValueError):
    """Raised when a parameter record violates the constraint system."""


@dataclass(frozen=True)
class TreatmentParams:
    """Cutoff, jump, window half-widths, and the eight line coefficients."""

    c: float
    j: float
    k_l: float
    k_r: float
    a2l: float
    b2l: float
    a1l: float
    b1l: float
    a1r: float
    b1r: float
    a2r: float
    b2r: float

    @classmethod
    def from_free(cls, c, j, k_l, k_r, a2l, b2l, a1l, a1r, a2r):
        """Build a full record from the free coefficients, deriving intercepts."""
        b1l, b1r, b2r = derived_intercepts(c, j, k_l, k_r, a2l, b2l, a1l, a1r, a2r)
        return cls(c, j, k_l, k_r, a2l, b2l, a1l, b1l, a1r, b1r, a2r, b2r)

    @property
    def free(self):
        return (self.c, self.j, self.k_l, self.k_r,
                self.a2l, self.b2l, self.a1l, self.a1r, self.a2r)


def derived_intercepts(c, j, k_l, k_r, a2l, b2l, a1l, a1r, a2r):
    """Intercepts forced by continuity at the window edges and the jump at c."""
    b1l = (c - k_l) * (a2l - a1l) + b2l
    b1r = (a1l - a1r) * c + b1l + j
    b2r = (c + k_r) * (a1r - a2r) + b1r
    return b1l, b1r, b2r


def coefficient_bounds(c, j, k_l, k_r, lo, hi, fixed=()):
    """Bound interval for the next free coefficient in the sampling order.

    ``fixed`` holds the already-assigned free coefficients, so its length
    selects which interval is returned: 0 -> a2l, 1 -> b2l, 2 -> a1l,
    3 -> a1r, 4 -> a2r.  An empty interval (upper < lower) signals an
    infeasible partial assignment; the caller must reject it.

    The a1l bound subtracts b2l from the numerator: dropping it (as a naive
    reading of the published interval list suggests) lets the left limit at c
    exceed 1 - j, violating the p <= 1 constraint the system solves for.
    """
    fixed = tuple(fixed)
    if len(fixed) == 0:
        return 0.0, (1.0 - j) / (c - k_l - lo)
    if len(fixed) == 1:
        (a2l,) = fixed
        return -a2l * lo, 1.0 - j - a2l * (c - k_l)
    if len(fixed) == 2:
        a2l, b2l = fixed
        return 0.0, (1.0 - j - a2l * (c - k_l) - b2l) / k_l
    if len(fixed) == 3:
        a2l, b2l, a1l = fixed
        b1l = (c - k_l) * (a2l - a1l) + b2l
        return 0.0, (1.0 - a1l * c - b1l - j) / k_r
    if len(fixed) == 4:
        a2l, b2l, a1l, a1r = fixed
        b1l = (c - k_l) * (a2l - a1l) + b2l
        b1r = (a1l - a1r) * c + b1l + j
        return 0.0, (1.0 - b1r - a1r * (c + k_r)) / (hi - c - k_r)
    raise ValueError("all five free coefficients are already fixed")


def treatment_prob(params, x, support=None):
    """Evaluate the four-piece take-up probability; right-continuous at c."""
    x = np.asarray(x, dtype=float)
    if support is not None:
        lo, hi = support
        if np.any(x < lo) or np.any(x > hi):
            raise ValueError("score outside the support")
    p = params
    conds = [x < p.c - p.k_l, x < p.c, x <= p.c + p.k_r]
    out = np.select(
        conds,
        [p.a2l * x + p.b2l, p.a1l * x + p.b1l, p.a1r * x + p.b1r],
        default=p.a2r * x + p.b2r,
    )
    return out if out.ndim else float(out)


def check_treatment_params(params, lo, hi, eta=None, tol=1e-10, grid=1000):
    """Validate monotonicity, range, jump size and edge continuity.

    The checks are exact on the piecewise-linear structure; ``grid`` only sets
    the resolution of the defensive range scan.
    """
    p = params
    if not (lo < p.c - p.k_l < p.c < p.c + p.k_r < hi):
        return False
    if eta is not None and not (eta - tol <= p.j <= 1.0 + tol):
        return False
    if min(p.a2l, p.a1l, p.a1r, p.a2r) < -tol:
        return False
    # continuity at the window edges
    xl, xr = p.c - p.k_l, p.c + p.k_r
    if abs((p.a2l * xl + p.b2l) - (p.a1l * xl + p.b1l)) > tol:
        return False
    if abs((p.a1r * xr + p.b1r) - (p.a2r * xr + p.b2r)) > tol:
        return False
    # jump of exactly j at c
    if abs((p.a1r * p.c + p.b1r) - (p.a1l * p.c + p.b1l) - p.j) > tol:
        return False
    # extremes of a nondecreasing piecewise-linear function
    if p.a2l * lo + p.b2l < -tol or p.a2r * hi + p.b2r > 1.0 + tol:
        return False
    xs = np.linspace(lo, hi, grid)
    vals = treatment_prob(p, xs)
    if vals.min() < -tol or vals.max() > 1.0 + tol or np.any(np.diff(vals) < -tol):
        return False
    return True


@dataclass(frozen=True)
class CutoffPrior:
    """Prior on the cutoff location: uniform, scaled beta, or a discrete pmf."""

    variant: str  # "uniform" | "scaled-beta" | "discrete"
    lo: float = 0.0
    hi: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    points: np.ndarray | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ("uniform", "scaled-beta", "discrete"):
            raise ValueError(f"unknown cutoff prior variant {self.variant!r}")
        if self.variant == "discrete":
            pts = np.asarray(self.points, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if pts.ndim != 1 or pts.size == 0 or w.shape != pts.shape:
                raise ValueError("discrete prior needs matching 1-d points and weights")
            if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
                raise ValueError("discrete prior weights must be nonnegative and sum to 1")
            order = np.argsort(pts)
            object.__setattr__(self, "points", pts[order])
            object.__setattr__(self, "weights", w[order] / w.sum())
            object.__setattr__(self, "lo", float(pts.min()))
            object.__setattr__(self, "hi", float(pts.max()))
        else:
            if not self.lo < self.hi:
                raise ValueError("cutoff prior needs lo < hi")
            if self.variant == "scaled-beta" and not (self.alpha > 0 and self.beta > 0):
                raise ValueError("beta shape parameters must be positive")

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def scaled_beta(cls, lo, hi, alpha, beta):
        return cls("scaled-beta", lo=float(lo), hi=float(hi), alpha=float(alpha), beta=float(beta))

    @classmethod
    def discrete(cls, points, weights=None):
        points = np.asarray(points, dtype=float)
        if weights is None:
            weights = np.full(points.shape, 1.0 / points.size)
        return cls("discrete", points=points, weights=np.asarray(weights, dtype=float))

    @classmethod
    def point_mass(cls, value):
        return cls.discrete([value], [1.0])

    @classmethod
    def point_mass_mixture(cls, value, mass, points):
        """Spike of ``mass`` at ``value``, remainder spread uniformly over ``points``."""
        points = np.asarray(points, dtype=float)
        others = points[~np.isclose(points, value)]
        pts = np.concatenate([[value], others])
        w = np.concatenate([[mass], np.full(others.size, (1.0 - mass) / max(others.size, 1))])
        return cls.discrete(pts, w)

    @property
    def is_discrete(self):
        return self.variant == "discrete"

    def log_pdf(self, c):
        if self.variant == "uniform":
            return -math.log(self.hi - self.lo) if self.lo <= c <= self.hi else -math.inf
        if self.variant == "scaled-beta":
            if not self.lo < c < self.hi:
                return -math.inf
            u = (c - self.lo) / (self.hi - self.lo)
            return ((self.alpha - 1) * math.log(u) + (self.beta - 1) * math.log1p(-u)
                    - special.betaln(self.alpha, self.beta) - math.log(self.hi - self.lo))
        idx = np.nonzero(np.isclose(self.points, c, rtol=0, atol=1e-12))[0]
        if idx.size == 0 or self.weights[idx[0]] <= 0:
            return -math.inf
        return math.log(self.weights[idx[0]])

    def sample(self, rng, size=None):
        if self.variant == "uniform":
            return rng.uniform(self.lo, self.hi, size)
        if self.variant == "scaled-beta":
            return self.lo + (self.hi - self.lo) * rng.beta(self.alpha, self.beta, size)
        return rng.choice(self.points, size=size, p=self.weights)

    def mean(self):
        if self.variant == "uniform":
            return 0.5 * (self.lo + self.hi)
        if self.variant == "scaled-beta":
            return self.lo + (self.hi - self.lo) * self.alpha / (self.alpha + self.beta)
        return float(np.dot(self.points, self.weights))

    def var(self):
        if self.variant == "uniform":
            return (self.hi - self.lo) ** 2 / 12.0
        if self.variant == "scaled-beta":
            a, b = self.alpha, self.beta
            return (self.hi - self.lo) ** 2 * a * b / ((a + b) ** 2 * (a + b + 1))
        m = self.mean()
        return float(np.dot((self.points - m) ** 2, self.weights))


@dataclass(frozen=True)
class TreatmentPriorSpec:
    """Everything the treatment prior depends on besides the parameters."""

    cutoff_prior: CutoffPrior
    support_bounds: "SupportBounds"
    eta: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")


def log_prior_treatment(params, spec):
    """Log density of the full treatment prior; -inf encodes any violated constraint."""
    p = params
    sb = spec.support_bounds
    lo, hi = sb.lo, sb.hi
    lp = spec.cutoff_prior.log_pdf(p.c)
    if not math.isfinite(lp):
        return -math.inf
    if not spec.eta <= p.j <= 1.0:
        return -math.inf
    lp -= math.log(1.0 - spec.eta)
    for k, width in ((p.k_l, p.c - sb.l_n), (p.k_r, sb.u_n - p.c)):
        if not (width > sb.d_x and sb.d_x <= k <= width):
            return -math.inf
        lp -= math.log(width - sb.d_x)
    fixed = []
    free_coeffs = (p.a2l, p.b2l, p.a1l, p.a1r, p.a2r)
    for value in free_coeffs:
        b_lo, b_hi = coefficient_bounds(p.c, p.j, p.k_l, p.k_r, lo, hi, fixed)
        if not (b_hi > b_lo and b_lo <= value <= b_hi):
            return -math.inf
        lp -= math.log(b_hi - b_lo)
        fixed.append(value)
    # reject records whose stored intercepts disagree with the derived ones
    b1l, b1r, b2r = derived_intercepts(*p.free[:4], *free_coeffs)
    if max(abs(b1l - p.b1l), abs(b1r - p.b1r), abs(b2r - p.b2r)) > 1e-9:
        return -math.inf
    return lp


def log_lik_treatment(params, dataset):
    """Bernoulli log likelihood of take-up under the piecewise-linear model."""
    if len(dataset) == 0:
        return 0.0
    p = np.clip(treatment_prob(params, dataset.scores), 1e-12, 1.0 - 1e-12)
    t = dataset.treatments
    return float(np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def sample_treatment_params(spec, rng, size=None, min_jump=None):
    """Draw from the treatment prior via the chained conditional uniforms.

    With ``size=None`` returns a single ``TreatmentParams``; otherwise a dict
    of coefficient arrays (vectorized, used by the large property suites).
    ``min_jump`` raises the lower bound of the jump draw (bounded-outcome
    coupling).
    """
    sb = spec.support_bounds
    scalar = size is None
    m = 1 if scalar else int(size)
    c = np.asarray(spec.cutoff_prior.sample(rng, m), dtype=float)
    j_lo = spec.eta if min_jump is None else max(spec.eta, min_jump)
    if j_lo >= 1.0:
        raise InfeasibleParams("jump lower bound reaches 1")
    j = rng.uniform(j_lo, 1.0, m)
    wl, wr = c - sb.l_n, sb.u_n - c
    if np.any(wl <= sb.d_x) or np.any(wr <= sb.d_x):
        raise InfeasibleParams("cutoff prior support leaves no room for the window priors")
    k_l = rng.uniform(sb.d_x, wl)
    k_r = rng.uniform(sb.d_x, wr)
    a2l = rng.uniform(0.0, (1.0 - j) / (c - k_l - sb.lo))
    b2l = rng.uniform(-a2l * sb.lo, 1.0 - j - a2l * (c - k_l))
    a1l = rng.uniform(0.0, (1.0 - j - a2l * (c - k_l) - b2l) / k_l)
    b1l = (c - k_l) * (a2l - a1l) + b2l
    a1r = rng.uniform(0.0, (1.0 - a1l * c - b1l - j) / k_r)
    b1r = (a1l - a1r) * c + b1l + j
    a2r = rng.uniform(0.0, (1.0 - b1r - a1r * (c + k_r)) / (sb.hi - c - k_r))
    b2r = (c + k_r) * (a1r - a2r) + b1r
    cols = dict(c=c, j=j, k_l=k_l, k_r=k_r, a2l=a2l, b2l=b2l, a1l=a1l, b1l=b1l,
                a1r=a1r, b1r=b1r, a2r=a2r, b2r=b2r)
    if scalar:
        return TreatmentParams(**{k: float(v[0]) for k, v in cols.items()})
    return cols
