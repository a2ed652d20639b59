"""Trimmed Taylor outcome model: linear near the cutoff, cubic tails.

On each side of the cutoff the mean is linear inside a window whose edge
(``kappa_l`` / ``kappa_r``) is itself a parameter; outside the window the same
linear coefficients extend to a cubic, so the tail informs (but cannot
dominate) the estimate at the cutoff.  Noise is Gaussian with a precision that
may only drop in the tails.  A binary variant keeps the linear pieces near the
cutoff and replaces the tails by inverse-logit cubics whose first-order
behaviour at the cutoff matches the linear pieces exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
COEF_SD = 100.0  # prior standard deviation of the linear coefficients


def _expit(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class OutcomeParamsContinuous:
    kappa_l: float
    kappa_r: float
    al0: float
    al1: float
    al2: float
    al3: float
    ar0: float
    ar1: float
    ar2: float
    ar3: float
    rho1_l: float
    rho2_l: float
    rho1_r: float
    rho2_r: float


@dataclass(frozen=True)
class OutcomeParamsBinary:
    kappa_l: float
    kappa_r: float
    fl0: float
    fl1: float
    fl2: float
    fl3: float
    fr0: float
    fr1: float
    fr2: float
    fr3: float


@dataclass(frozen=True)
class BoundedOutcomeSpec:
    """Outcome range [lo, hi]; couples the jump prior to the intercepts."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("bounded outcome needs lo < hi")

    def jump_lower_bound(self, f_l0, f_r0, eta):
        return max(eta, abs(f_r0 - f_l0) / (self.hi - self.lo))

    def log_prior_jump(self, j, f_l0, f_r0, eta):
        lb = self.jump_lower_bound(f_l0, f_r0, eta)
        if lb >= 1.0 or not lb <= j <= 1.0:
            return -math.inf
        return -math.log(1.0 - lb)


def outcome_mean(params, x, c, smoothing=None):
    """Mean function, exact (default) or with sigmoid-smoothed window edges.

    In the smoothed form the quadratic and cubic terms are multiplied by
    ``expit(s * (kappa_l - x))`` on the left and ``expit(s * (x - kappa_r))``
    on the right, which removes the knot discontinuities the sampler would
    otherwise have to cross.
    """
    x = np.asarray(x, dtype=float)
    p = params
    d = x - c
    left = x < c
    lin = np.where(left, p.al0 + p.al1 * d, p.ar0 + p.ar1 * d)
    tail = np.where(left, p.al2 * d ** 2 + p.al3 * d ** 3, p.ar2 * d ** 2 + p.ar3 * d ** 3)
    if smoothing is None:
        w = np.where(left, x <= p.kappa_l, x >= p.kappa_r).astype(float)
    else:
        s = float(smoothing)
        w = np.where(left, _expit(s * (p.kappa_l - x)), _expit(s * (x - p.kappa_r)))
    out = lin + w * tail
    return out if out.ndim else float(out)


def outcome_sd(params, x, c):
    """Noise standard deviation: 1/sqrt(rho1) inside the window, 1/sqrt(rho2) in the tail."""
    x = np.asarray(x, dtype=float)
    p = params
    rho = np.where(
        x < c,
        np.where(x >= p.kappa_l, p.rho1_l, p.rho2_l),
        np.where(x <= p.kappa_r, p.rho1_r, p.rho2_r),
    )
    out = 1.0 / np.sqrt(rho)
    return out if out.ndim else float(out)


def _normal_logpdf(value, sd):
    return -math.log(sd) - 0.5 * LOG_2PI - 0.5 * (value / sd) ** 2


def _gamma_logpdf(value, shape, rate):
    if value <= 0:
        return -math.inf
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * math.log(value) - rate * value


def _log_prior_windows(kappa_l, kappa_r, c, sb):
    wl = c - sb.d_x - sb.l_n
    wr = sb.u_n - c - sb.d_x
    if wl <= 0 or wr <= 0:
        return -math.inf
    if not (sb.l_n <= kappa_l <= c - sb.d_x and c + sb.d_x <= kappa_r <= sb.u_n):
        return -math.inf
    return -math.log(wl) - math.log(wr)


def log_prior_outcome_continuous(params, c, support_bounds, bounds=None):
    """Log prior density of the continuous outcome parameters given the cutoff.

    The quadratic/cubic coefficients get normal priors whose standard
    deviation grows as the linear window shrinks, favouring long linear parts
    over long cubics with small coefficients.  Tail precisions are uniform
    below the window precisions.  With ``bounds`` set, the intercepts are
    uniform on the outcome range instead of normal.
    """
    p = params
    lp = _log_prior_windows(p.kappa_l, p.kappa_r, c, support_bounds)
    if not math.isfinite(lp):
        return -math.inf
    sd_l = COEF_SD / math.sqrt(c - p.kappa_l)
    sd_r = COEF_SD / math.sqrt(p.kappa_r - c)
    if bounds is None:
        lp += _normal_logpdf(p.al0, COEF_SD) + _normal_logpdf(p.ar0, COEF_SD)
    else:
        if not (bounds.lo <= p.al0 <= bounds.hi and bounds.lo <= p.ar0 <= bounds.hi):
            return -math.inf
        lp -= 2.0 * math.log(bounds.hi - bounds.lo)
    lp += _normal_logpdf(p.al1, COEF_SD) + _normal_logpdf(p.ar1, COEF_SD)
    lp += _normal_logpdf(p.al2, sd_l) + _normal_logpdf(p.al3, sd_l)
    lp += _normal_logpdf(p.ar2, sd_r) + _normal_logpdf(p.ar3, sd_r)
    for rho1, rho2 in ((p.rho1_l, p.rho2_l), (p.rho1_r, p.rho2_r)):
        g = _gamma_logpdf(rho1, 0.01, 0.01)
        if not math.isfinite(g) or not 0.0 < rho2 <= rho1:
            return -math.inf
        lp += g - math.log(rho1)
    return lp


def binary_tilde_transform(f0, f1):
    """Tail logit coefficients matching the first-order behaviour at the cutoff."""
    if not 0.0 < f0 < 1.0:
        raise ValueError("f0 must lie strictly inside (0, 1)")
    return math.log(f0 / (1.0 - f0)), f1 / (f0 * (1.0 - f0))


def outcome_mean_binary(params, x, c, smoothing=None):
    """Binary-outcome mean: bounded linear near c, inverse-logit cubic in the tails.

    Smoothing blends the two pieces with the same sigmoid weight used for the
    continuous model.  The result is clamped to [1e-12, 1 - 1e-12]: the exact
    value lies in (0, 1) but the saturated inverse logit rounds to 1.0 in
    double precision, and the Bernoulli likelihood clips at the same constant.
    """
    x = np.asarray(x, dtype=float)
    p = params
    d = x - c
    left = x < c
    tl0, tl1 = binary_tilde_transform(p.fl0, p.fl1)
    tr0, tr1 = binary_tilde_transform(p.fr0, p.fr1)
    lin = np.where(left, p.fl0 + p.fl1 * d, p.fr0 + p.fr1 * d)
    cub = _expit(np.where(
        left,
        tl0 + tl1 * d + p.fl2 * d ** 2 + p.fl3 * d ** 3,
        tr0 + tr1 * d + p.fr2 * d ** 2 + p.fr3 * d ** 3,
    ))
    if smoothing is None:
        w = np.where(left, x <= p.kappa_l, x >= p.kappa_r).astype(float)
    else:
        s = float(smoothing)
        w = np.where(left, _expit(s * (p.kappa_l - x)), _expit(s * (x - p.kappa_r)))
    out = np.clip((1.0 - w) * lin + w * cub, 1e-12, 1.0 - 1e-12)
    return out if out.ndim else float(out)


def log_prior_outcome_binary(params, c, support_bounds, eps=0.01):
    """Log prior of the binary outcome parameters.

    The linear segments are constrained to [eps, 1 - eps] at both ends of
    their domains, which bounds the slope given the intercept; quadratic and
    cubic tail terms keep the window-scaled normal priors.
    """
    p = params
    lp = _log_prior_windows(p.kappa_l, p.kappa_r, c, support_bounds)
    if not math.isfinite(lp):
        return -math.inf
    sides = ((p.fl0, p.fl1, c - p.kappa_l, -1.0), (p.fr0, p.fr1, p.kappa_r - c, 1.0))
    for f0, f1, width, sign in sides:
        if not eps <= f0 <= 1.0 - eps:
            return -math.inf
        lp -= math.log(1.0 - 2.0 * eps)
        edge = f0 + sign * f1 * width  # segment value at the window edge
        if not eps <= edge <= 1.0 - eps:
            return -math.inf
        lp -= math.log((1.0 - 2.0 * eps) / width)
    sd_l = COEF_SD / math.sqrt(c - p.kappa_l)
    sd_r = COEF_SD / math.sqrt(p.kappa_r - c)
    lp += _normal_logpdf(p.fl2, sd_l) + _normal_logpdf(p.fl3, sd_l)
    lp += _normal_logpdf(p.fr2, sd_r) + _normal_logpdf(p.fr3, sd_r)
    return lp


def log_lik_outcome(params, dataset, c, kind=None, smoothing=None):
    """Gaussian (continuous/bounded) or Bernoulli (binary) outcome log likelihood."""
    if len(dataset) == 0:
        return 0.0
    if kind is None:
        kind = "binary" if isinstance(params, OutcomeParamsBinary) else "continuous"
    x, y = dataset.scores, dataset.outcomes
    if kind == "binary":
        f = np.clip(outcome_mean_binary(params, x, c, smoothing), 1e-12, 1.0 - 1e-12)
        return float(np.sum(y * np.log(f) + (1.0 - y) * np.log1p(-f)))
    f = outcome_mean(params, x, c, smoothing)
    sd = outcome_sd(params, x, c)
    return float(np.sum(-np.log(sd) - 0.5 * LOG_2PI - 0.5 * ((y - f) / sd) ** 2))


def sample_outcome_params_continuous(c, support_bounds, rng, bounds=None, size=None):
    """Ancestral draw(s) from the continuous outcome prior given the cutoff."""
    sb = support_bounds
    scalar = size is None
    m = 1 if scalar else int(size)
    kappa_l = rng.uniform(sb.l_n, c - sb.d_x, m)
    kappa_r = rng.uniform(c + sb.d_x, sb.u_n, m)
    sd_l = COEF_SD / np.sqrt(c - kappa_l)
    sd_r = COEF_SD / np.sqrt(kappa_r - c)
    if bounds is None:
        al0 = rng.normal(0.0, COEF_SD, m)
        ar0 = rng.normal(0.0, COEF_SD, m)
    else:
        al0 = rng.uniform(bounds.lo, bounds.hi, m)
        ar0 = rng.uniform(bounds.lo, bounds.hi, m)
    rho1_l = rng.gamma(0.01, 100.0, m)
    rho1_r = rng.gamma(0.01, 100.0, m)
    cols = dict(
        kappa_l=kappa_l, kappa_r=kappa_r,
        al0=al0, al1=rng.normal(0.0, COEF_SD, m),
        al2=rng.normal(0.0, sd_l), al3=rng.normal(0.0, sd_l),
        ar0=ar0, ar1=rng.normal(0.0, COEF_SD, m),
        ar2=rng.normal(0.0, sd_r), ar3=rng.normal(0.0, sd_r),
        rho1_l=rho1_l, rho2_l=rng.uniform(0.0, rho1_l),
        rho1_r=rho1_r, rho2_r=rng.uniform(0.0, rho1_r),
    )
    if scalar:
        return OutcomeParamsContinuous(**{k: float(v[0]) for k, v in cols.items()})
    return cols


def sample_outcome_params_binary(c, support_bounds, rng, eps=0.01, size=None):
    """Ancestral draw(s) from the binary outcome prior given the cutoff."""
    sb = support_bounds
    scalar = size is None
    m = 1 if scalar else int(size)
    kappa_l = rng.uniform(sb.l_n, c - sb.d_x, m)
    kappa_r = rng.uniform(c + sb.d_x, sb.u_n, m)
    sd_l = COEF_SD / np.sqrt(c - kappa_l)
    sd_r = COEF_SD / np.sqrt(kappa_r - c)
    fl0 = rng.uniform(eps, 1.0 - eps, m)
    fr0 = rng.uniform(eps, 1.0 - eps, m)
    # slopes keep the linear segment inside [eps, 1 - eps] at the window edge
    fl1 = rng.uniform((fl0 - 1.0 + eps) / (c - kappa_l), (fl0 - eps) / (c - kappa_l))
    fr1 = rng.uniform((eps - fr0) / (kappa_r - c), (1.0 - eps - fr0) / (kappa_r - c))
    cols = dict(
        kappa_l=kappa_l, kappa_r=kappa_r,
        fl0=fl0, fl1=fl1, fl2=rng.normal(0.0, sd_l), fl3=rng.normal(0.0, sd_l),
        fr0=fr0, fr1=fr1, fr2=rng.normal(0.0, sd_r), fr3=rng.normal(0.0, sd_r),
    )
    if scalar:
        return OutcomeParamsBinary(**{k: float(v[0]) for k, v in cols.items()})
    return cols
