"""Comparison estimators: local linear regression and naive plug-in pipelines.

The LLR here is a deliberately plain comparator: triangular-kernel weighted
least squares on each side with heteroscedasticity-robust Wald intervals.  It
is not a bias-corrected robust estimator, and the plug-in variants propagate
no cutoff uncertainty at all; both reproduce the qualitative failure modes the
Bayesian model is designed to avoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from . import mcmc
from .analysis import map_estimate


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class LLRConfig:
    bandwidth: float | None = None  # None -> rule of thumb
    kernel: str = "triangular"
    level: float = 0.95

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise BaselineError("bandwidth must be positive")
        if self.kernel != "triangular":
            raise BaselineError("only the triangular kernel is supported")


@dataclass(frozen=True)
class LLREstimate:
    tau_hat: float
    se: float
    ci: tuple[float, float]
    outcome_jump: float
    outcome_jump_se: float
    treatment_jump: float | None
    treatment_jump_se: float | None
    n_left: int
    n_right: int
    bandwidth: float
    cutoff: float
    sharp: bool
    unstable: bool = False

    def to_dict(self):
        return {
            "tau_hat": self.tau_hat, "se": self.se,
            "ci_lo": self.ci[0], "ci_hi": self.ci[1],
            "outcome_jump": self.outcome_jump, "outcome_jump_se": self.outcome_jump_se,
            "treatment_jump": self.treatment_jump, "treatment_jump_se": self.treatment_jump_se,
            "n_left": self.n_left, "n_right": self.n_right,
            "bandwidth": self.bandwidth, "cutoff": self.cutoff,
            "sharp": self.sharp, "unstable": self.unstable,
        }


def rule_of_thumb_bandwidth(dataset, cutoff):
    """h = 1.06 sd(x) n^(-1/5), enlarged if a side would hold < 10 points."""
    x = dataset.scores
    n = x.size
    if n < 50:
        raise BaselineError("need at least 50 points for the bandwidth rule")
    h = 1.06 * float(np.std(x)) * n ** (-0.2)
    for side in (x[x < cutoff], x[x >= cutoff]):
        if side.size < 10:
            raise BaselineError("fewer than 10 observations on one side of the cutoff")
        dist = np.sort(np.abs(side - cutoff))
        h = max(h, float(dist[9]) * (1 + 1e-12))
    return h


def _wls_intercept(x, v, w, cutoff):
    """Weighted linear fit of v on (x - cutoff); intercept and its sandwich se."""
    d = x - cutoff
    sw = w.sum()
    swd = (w * d).sum()
    swdd = (w * d * d).sum()
    det = sw * swdd - swd * swd
    if det <= 0:
        raise BaselineError("degenerate local design matrix")
    swv = (w * v).sum()
    swdv = (w * d * v).sum()
    a = (swdd * swv - swd * swdv) / det
    b = (sw * swdv - swd * swv) / det
    resid = v - a - b * d
    # HC0 sandwich for the intercept: first row of (X'WX)^{-1} X'W diag(e^2) WX ...
    g1 = (swdd - swd * d) / det  # per-observation weight of row 1 of (X'WX)^{-1} X'
    var_a = float(np.sum((g1 * w * resid) ** 2))
    return float(a), math.sqrt(max(var_a, 0.0))


def llr_fit(dataset, cutoff, config=None, sharp=None):
    """Local linear treatment-effect estimate at ``cutoff`` with a Wald CI.

    Sharp: the outcome jump.  Fuzzy: outcome jump over treatment jump with a
    delta-method se that treats the two jumps as independent.  A treatment
    jump below 1e-3 is returned flagged as unstable rather than raised.
    """
    config = config or LLRConfig()
    if sharp is None:
        sharp = bool(np.array_equal(dataset.treatments, (dataset.scores >= cutoff).astype(float)))
    h = config.bandwidth if config.bandwidth is not None else rule_of_thumb_bandwidth(dataset, cutoff)
    x, t, y = dataset.scores, dataset.treatments, dataset.outcomes
    w = np.maximum(0.0, 1.0 - np.abs(x - cutoff) / h)
    left = (x < cutoff) & (w > 0)
    right = (x >= cutoff) & (w > 0)
    if left.sum() < 10 or right.sum() < 10:
        raise BaselineError("fewer than 10 in-bandwidth observations on one side")
    yl, yl_se = _wls_intercept(x[left], y[left], w[left], cutoff)
    yr, yr_se = _wls_intercept(x[right], y[right], w[right], cutoff)
    dy = yr - yl
    dy_var = yl_se ** 2 + yr_se ** 2
    z = stats.norm.ppf(0.5 + config.level / 2)
    if sharp:
        se = math.sqrt(dy_var)
        return LLREstimate(
            tau_hat=dy, se=se, ci=(dy - z * se, dy + z * se),
            outcome_jump=dy, outcome_jump_se=math.sqrt(dy_var),
            treatment_jump=None, treatment_jump_se=None,
            n_left=int(left.sum()), n_right=int(right.sum()),
            bandwidth=h, cutoff=float(cutoff), sharp=True)
    tl, tl_se = _wls_intercept(x[left], t[left], w[left], cutoff)
    tr, tr_se = _wls_intercept(x[right], t[right], w[right], cutoff)
    dt = tr - tl
    dt_var = tl_se ** 2 + tr_se ** 2
    unstable = abs(dt) < 1e-3
    if dt == 0.0:
        tau, se = math.inf, math.inf
    else:
        tau = dy / dt
        se = math.sqrt((dy_var + tau * tau * dt_var) / (dt * dt))
    return LLREstimate(
        tau_hat=tau, se=se, ci=(tau - z * se, tau + z * se),
        outcome_jump=dy, outcome_jump_se=math.sqrt(dy_var),
        treatment_jump=dt, treatment_jump_se=math.sqrt(dt_var),
        n_left=int(left.sum()), n_right=int(right.sum()),
        bandwidth=h, cutoff=float(cutoff), sharp=False, unstable=unstable)


def _poly_intercept(x, v, cutoff, degree):
    d = x - cutoff
    X = np.vander(d, degree + 1, increasing=True)
    beta, *_ = np.linalg.lstsq(X, v, rcond=None)
    resid = v - X @ beta
    xtx_inv = np.linalg.pinv(X.T @ X)
    meat = (X * resid[:, None] ** 2).T @ X
    var = xtx_inv @ meat @ xtx_inv
    return float(beta[0]), math.sqrt(max(float(var[0, 0]), 0.0))


def cubic_fit(dataset, cutoff, level=0.95, sharp=None):
    """Two independent global cubic fits, one per side; Wald CI on the jump."""
    x, t, y = dataset.scores, dataset.treatments, dataset.outcomes
    if sharp is None:
        sharp = bool(np.array_equal(t, (x >= cutoff).astype(float)))
    left = x < cutoff
    right = ~left
    if left.sum() < 5 or right.sum() < 5:
        raise BaselineError("too few observations for cubic side fits")
    yl, yl_se = _poly_intercept(x[left], y[left], cutoff, 3)
    yr, yr_se = _poly_intercept(x[right], y[right], cutoff, 3)
    dy = yr - yl
    dy_var = yl_se ** 2 + yr_se ** 2
    z = stats.norm.ppf(0.5 + level / 2)
    if sharp:
        se = math.sqrt(dy_var)
        return LLREstimate(tau_hat=dy, se=se, ci=(dy - z * se, dy + z * se),
                           outcome_jump=dy, outcome_jump_se=se,
                           treatment_jump=None, treatment_jump_se=None,
                           n_left=int(left.sum()), n_right=int(right.sum()),
                           bandwidth=math.inf, cutoff=float(cutoff), sharp=True)
    tl, tl_se = _poly_intercept(x[left], t[left], cutoff, 3)
    tr, tr_se = _poly_intercept(x[right], t[right], cutoff, 3)
    dt = tr - tl
    dt_var = tl_se ** 2 + tr_se ** 2
    unstable = abs(dt) < 1e-3
    tau = dy / dt if dt != 0.0 else math.inf
    se = math.sqrt((dy_var + tau * tau * dt_var) / (dt * dt)) if dt != 0.0 else math.inf
    return LLREstimate(tau_hat=tau, se=se, ci=(tau - z * se, tau + z * se),
                       outcome_jump=dy, outcome_jump_se=math.sqrt(dy_var),
                       treatment_jump=dt, treatment_jump_se=math.sqrt(dt_var),
                       n_left=int(left.sum()), n_right=int(right.sum()),
                       bandwidth=math.inf, cutoff=float(cutoff), sharp=False,
                       unstable=unstable)


def plugin_estimate(dataset, cutoff_source, priors, config=None, sampler_config=None):
    """Point-estimate the cutoff, then run LLR there with no uncertainty carried over.

    ``cutoff_source`` is "two-constant-MAP" or "treatment-only-MAP".  The
    deliberate omission of cutoff uncertainty is the point: it reproduces the
    overconfidence of plug-in inference.
    """
    kind = "discrete" if priors.cutoff_prior.is_discrete else "continuous"
    if cutoff_source == "two-constant-MAP":
        sc = sampler_config or mcmc.SamplerConfig(chains=2, burn_in=1000, adapt=500,
                                                  draws=5000, mode="treatment-only")
        tc = mcmc.two_constant_posterior(dataset, priors.cutoff_prior, priors.eta, sc)
        c_hat = map_estimate(tc.column("c"), kind)
    elif cutoff_source == "treatment-only-MAP":
        sc = sampler_config or mcmc.SamplerConfig(mode="treatment-only")
        draws, _ = mcmc.run(dataset, priors, replace(sc, mode="treatment-only"))
        c_hat = map_estimate(draws.column("c"), kind)
    else:
        raise BaselineError(f"unknown cutoff source {cutoff_source!r}")
    return llr_fit(dataset, c_hat, config, sharp=False), c_hat
