"""Posterior summaries: effect draws, MAP, HDIs, function bands, joint views."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .outcome import OutcomeParamsBinary


def tau_per_draw(treatment_params, outcome_params):
    """Treatment effect of one draw: outcome jump over take-up jump at c."""
    if isinstance(outcome_params, OutcomeParamsBinary):
        num = outcome_params.fr0 - outcome_params.fl0
    else:
        num = outcome_params.ar0 - outcome_params.al0
    return num / treatment_params.j


def map_estimate(samples, kind="continuous"):
    """Posterior mode: empirical pmf mode (discrete) or KDE argmax (continuous).

    The continuous estimator maximizes a Gaussian kernel density with
    Silverman's rule-of-thumb bandwidth over a 512-point grid spanning the
    sample range.  Ties resolve to the smallest value.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    if n < 100:
        raise ValueError("need at least 100 samples")
    if kind == "discrete":
        values, counts = np.unique(samples, return_counts=True)
        return float(values[np.argmax(counts)])
    lo, hi = samples.min(), samples.max()
    if lo == hi:
        return float(lo)
    sd = samples.std()
    q75, q25 = np.percentile(samples, [75, 25])
    sigma = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if sigma <= 0:
        sigma = (hi - lo) / 100.0
    bw = 0.9 * sigma * n ** (-0.2)
    grid = np.linspace(lo, hi, 512)
    # dense pre-binning keeps the KDE evaluation cheap without moving the argmax
    hist, edges = np.histogram(samples, bins=4096, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    nz = hist > 0
    density = np.exp(-0.5 * ((grid[:, None] - centers[None, nz]) / bw) ** 2) @ hist[nz]
    return float(grid[np.argmax(density)])


def hdi(samples, level=0.95):
    """Shortest contiguous interval containing ceil(level * n) sorted samples."""
    samples = np.sort(np.asarray(samples, dtype=float))
    n = samples.size
    if n < 100:
        raise ValueError("need at least 100 samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    m = int(math.ceil(level * n))
    if m >= n:
        return float(samples[0]), float(samples[-1])
    widths = samples[m - 1:] - samples[: n - m + 1]
    i = int(np.argmin(widths))  # first minimum -> smallest lower endpoint
    return float(samples[i]), float(samples[i + m - 1])


@dataclass(frozen=True)
class EstimandSummary:
    map: float
    hdi_lo: float
    hdi_hi: float
    mean: float
    median: float


@dataclass(frozen=True)
class EstimateReport:
    """Reported quantities for the headline estimands, on the raw data scale."""

    level: float
    estimands: dict[str, EstimandSummary] = field(default_factory=dict)

    def to_dict(self):
        return {"level": self.level,
                "estimands": {k: asdict(v) for k, v in self.estimands.items()}}


def _summary(samples, level, kind):
    lo, hi = hdi(samples, level)
    return EstimandSummary(
        map=map_estimate(samples, kind),
        hdi_lo=lo, hdi_hi=hi,
        mean=float(np.mean(samples)),
        median=float(np.median(samples)),
    )


def summarize(draws, level=0.95, score_scale=None, outcome_scale=None, c_discrete=None):
    """Build the estimate report for tau, c, and j, back-transformed to raw units.

    ``c`` is mapped through the score scale, ``tau`` through the outcome scale
    factor (offsets cancel in a difference), and ``j`` is a probability and
    stays untouched.
    """
    if c_discrete is None:
        c_discrete = getattr(draws, "c_discrete", False)
    estimands = {}
    c = draws.column("c")
    if score_scale is not None:
        c = score_scale.to_raw(c)
    estimands["c"] = _summary(c, level, "discrete" if c_discrete else "continuous")
    estimands["j"] = _summary(draws.column("j"), level, "continuous")
    if "tau" in draws.columns:
        tau = draws.column("tau")
        if outcome_scale is not None:
            tau = tau * outcome_scale.scale
        estimands["tau"] = _summary(tau, level, "continuous")
    return EstimateReport(level=level, estimands=estimands)


@dataclass(frozen=True)
class FunctionBand:
    grid: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def to_frame(self):
        return pd.DataFrame({"grid": self.grid, "median": self.median,
                             "lo": self.lower, "hi": self.upper})


def _eval_treatment_cols(cols, x):
    c, k_l, k_r = cols["c"], cols["k_l"], cols["k_r"]
    return np.where(
        x < c - k_l, cols["a2l"] * x + cols["b2l"],
        np.where(x < c, cols["a1l"] * x + cols["b1l"],
                 np.where(x <= c + k_r, cols["a1r"] * x + cols["b1r"],
                          cols["a2r"] * x + cols["b2r"])))


def _eval_outcome_cols(cols, x, binary):
    c = cols["c"]
    d = x - c
    left = x < c
    if binary:
        fl0, fl1, fr0, fr1 = cols["fl0"], cols["fl1"], cols["fr0"], cols["fr1"]
        tl0 = np.log(fl0 / (1.0 - fl0))
        tl1 = fl1 / (fl0 * (1.0 - fl0))
        tr0 = np.log(fr0 / (1.0 - fr0))
        tr1 = fr1 / (fr0 * (1.0 - fr0))
        lin = np.where(left, fl0 + fl1 * d, fr0 + fr1 * d)
        z = np.where(left,
                     tl0 + tl1 * d + cols["fl2"] * d ** 2 + cols["fl3"] * d ** 3,
                     tr0 + tr1 * d + cols["fr2"] * d ** 2 + cols["fr3"] * d ** 3)
        with np.errstate(over="ignore"):
            cub = 1.0 / (1.0 + np.exp(-z))
        w = np.where(left, x <= cols["kappa_l"], x >= cols["kappa_r"])
        return np.where(w, cub, lin)
    lin = np.where(left, cols["al0"] + cols["al1"] * d, cols["ar0"] + cols["ar1"] * d)
    tail = np.where(left,
                    cols["al2"] * d ** 2 + cols["al3"] * d ** 3,
                    cols["ar2"] * d ** 2 + cols["ar3"] * d ** 3)
    w = np.where(left, x <= cols["kappa_l"], x >= cols["kappa_r"])
    return lin + w * tail


def function_band(draws, grid, which="treatment", level=0.95):
    """Pointwise median and central credible band of the posterior functions.

    Functions are evaluated exactly (no sigmoid smoothing), one value per
    retained draw per grid point.
    """
    grid = np.asarray(grid, dtype=float)
    if which == "treatment":
        names = ("c", "k_l", "k_r", "a2l", "b2l", "a1l", "b1l", "a1r", "b1r", "a2r", "b2r")
    elif draws.outcome_kind == "binary":
        names = ("c", "kappa_l", "kappa_r", "fl0", "fl1", "fl2", "fl3", "fr0", "fr1", "fr2", "fr3")
    else:
        names = ("c", "kappa_l", "kappa_r", "al0", "al1", "al2", "al3", "ar0", "ar1", "ar2", "ar3")
    cols = {n: draws.column(n) for n in names}
    qs = [0.5 * (1 - level), 0.5, 1 - 0.5 * (1 - level)]
    lower = np.empty(grid.size)
    median = np.empty(grid.size)
    upper = np.empty(grid.size)
    for g, x in enumerate(grid):
        if which == "treatment":
            vals = _eval_treatment_cols(cols, x)
        else:
            vals = _eval_outcome_cols(cols, x, draws.outcome_kind == "binary")
        lower[g], median[g], upper[g] = np.quantile(vals, qs)
    return FunctionBand(grid=grid, median=median, lower=lower, upper=upper, level=level)


@dataclass(frozen=True)
class JointCTauSummary:
    """Conditional effect boxplot data per cutoff value/bin, plus the c marginal."""

    table: pd.DataFrame
    discrete: bool

    def to_frame(self):
        return self.table


def joint_c_tau(draws, bins=20, c_discrete=None):
    """Group effect draws by cutoff value (discrete) or equal-mass bin.

    Emits five-number conditional summaries (quartiles plus Tukey whiskers)
    and the marginal cutoff distribution.
    """
    if c_discrete is None:
        c_discrete = getattr(draws, "c_discrete", False)
    c = draws.column("c")
    tau = draws.column("tau")
    n = c.size
    rows = []
    if c_discrete:
        keys = np.unique(c)
        groups = [(k, tau[c == k]) for k in keys]
    else:
        edges = np.quantile(c, np.linspace(0, 1, bins + 1))
        edges = np.unique(edges)
        idx = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, len(edges) - 2)
        groups = []
        for b in range(len(edges) - 1):
            sel = idx == b
            if sel.any():
                groups.append((0.5 * (edges[b] + edges[b + 1]), tau[sel]))
    for key, t in groups:
        q1, med, q3 = np.percentile(t, [25, 50, 75])
        iqr = q3 - q1
        in_lo = t[t >= q1 - 1.5 * iqr]
        in_hi = t[t <= q3 + 1.5 * iqr]
        rows.append({
            "c": float(key), "count": int(t.size), "marginal": t.size / n,
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_lo": float(in_lo.min()), "whisker_hi": float(in_hi.max()),
        })
    return JointCTauSummary(table=pd.DataFrame(rows), discrete=c_discrete)


def kde_mode_count(samples, rel_height=0.1):
    """Number of KDE modes above ``rel_height`` of the peak (unimodality check)."""
    samples = np.asarray(samples, dtype=float)
    lo, hi = samples.min(), samples.max()
    if lo == hi:
        return 1
    sd = samples.std()
    bw = max(0.9 * sd * samples.size ** (-0.2), (hi - lo) / 512)
    grid = np.linspace(lo, hi, 512)
    hist, edges = np.histogram(samples, bins=2048, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    nz = hist > 0
    density = np.exp(-0.5 * ((grid[:, None] - centers[None, nz]) / bw) ** 2) @ hist[nz]
    peak = density.max()
    interior = density[1:-1]
    is_mode = (interior > density[:-2]) & (interior >= density[2:]) & (interior > rel_height * peak)
    count = int(np.count_nonzero(is_mode))
    if density[0] > density[1] and density[0] > rel_height * peak:
        count += 1
    if density[-1] > density[-2] and density[-1] > rel_height * peak:
        count += 1
    return max(count, 1)
