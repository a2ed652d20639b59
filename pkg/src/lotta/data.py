"""Dataset ingestion, normalization, support quantities, and binning.

The sampler and all priors operate on a ``Dataset`` whose scores have been
divided by their observed range (so the support has width one) and whose
continuous outcomes have been rescaled to unit standard deviation.  The
transforms are recorded in ``ScoreScale`` / ``OutcomeScale`` so every reported
estimand can be mapped back to raw units.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

GRID_TOL = 1e-9


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


@dataclass(frozen=True)
class ScoreKind:
    """Score support type: continuous, or values on a regular grid with ``step``."""

    kind: str  # "continuous" | "discrete-grid"
    step: float | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete-grid"):
            raise DataError(f"unknown score kind {self.kind!r}")
        if self.kind == "discrete-grid" and not (self.step is not None and self.step > 0):
            raise DataError("discrete-grid scores need a positive step")


@dataclass(frozen=True)
class OutcomeKind:
    kind: str  # "continuous" | "binary" | "bounded"
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "binary", "bounded"):
            raise DataError(f"unknown outcome kind {self.kind!r}")
        if self.kind == "bounded":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise DataError("bounded outcomes need lo < hi")


@dataclass(frozen=True)
class ScoreScale:
    """Affine map from normalized scores back to raw units: raw = z * range + offset."""

    range: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.range > 0:
            raise DataError("score range must be positive")

    def to_raw(self, z):
        return np.asarray(z) * self.range + self.offset

    def to_normalized(self, raw):
        return (np.asarray(raw) - self.offset) / self.range


@dataclass(frozen=True)
class OutcomeScale:
    """Outcome rescaling record: raw = y * scale + offset (identity for binary)."""

    scale: float = 1.0
    offset: float = 0.0

    def to_raw(self, y):
        return np.asarray(y) * self.scale + self.offset

    def to_normalized(self, raw):
        return (np.asarray(raw) - self.offset) / self.scale


@dataclass(frozen=True)
class Dataset:
    """Score/treatment/outcome triples with type tags and a support interval.

    ``support`` is the closed interval the treatment model's boundary
    constraints are evaluated at; every score must lie inside it.
    """

    scores: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    score_kind: ScoreKind
    outcome_kind: OutcomeKind
    support: tuple[float, float]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        treatments = np.asarray(self.treatments, dtype=float)
        outcomes = np.asarray(self.outcomes, dtype=float)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "treatments", treatments)
        object.__setattr__(self, "outcomes", outcomes)
        n = scores.shape[0]
        if treatments.shape[0] != n or outcomes.shape[0] != n:
            raise DataError("scores, treatments and outcomes must have equal length")
        if n < 1:
            raise DataError("dataset must contain at least one row")
        lo, hi = self.support
        if not lo < hi:
            raise DataError("support must be a nondegenerate interval")
        if scores.size and (scores.min() < lo - 1e-12 or scores.max() > hi + 1e-12):
            raise DataError("scores outside the declared support")
        if not np.isin(treatments, (0.0, 1.0)).all():
            raise DataError("treatments must be 0/1")
        if self.outcome_kind.kind == "binary" and not np.isin(outcomes, (0.0, 1.0)).all():
            raise DataError("binary outcomes must be 0/1")

    def __len__(self):
        return self.scores.shape[0]

    @classmethod
    def empty(cls, support, score_kind=None, outcome_kind=None):
        """Zero-row dataset for prior-predictive runs (likelihood contributes 0).

        Bypasses the length check; ``normalize`` never produces one of these.
        """
        ds = cls.__new__(cls)
        object.__setattr__(ds, "scores", np.empty(0))
        object.__setattr__(ds, "treatments", np.empty(0))
        object.__setattr__(ds, "outcomes", np.empty(0))
        object.__setattr__(ds, "score_kind", score_kind or ScoreKind("continuous"))
        object.__setattr__(ds, "outcome_kind", outcome_kind or OutcomeKind("continuous"))
        object.__setattr__(ds, "support", (float(support[0]), float(support[1])))
        return ds


@dataclass(frozen=True)
class SupportBounds:
    """Data-derived quantities the window priors depend on.

    ``d_x`` is the minimal admissible window half-width, ``l_n``/``u_n`` keep at
    least ``n`` observations outside any sampled window edge, and ``lo``/``hi``
    are the support endpoints the coefficient constraints are anchored at.
    """

    d_x: float
    l_n: float
    u_n: float
    n: int = 25
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.d_x > 0:
            raise DataError("d_x must be positive")
        if not self.l_n < self.u_n:
            raise DataError("l_n must be below u_n")


@dataclass(frozen=True)
class BinnedSeries:
    bin_centers: np.ndarray
    bin_means: np.ndarray
    bin_counts: np.ndarray
    split_point: float


def detect_score_kind(scores, tol=GRID_TOL):
    """Classify scores as a regular grid (single gap value up to ``tol``) or continuous."""
    distinct = np.unique(np.asarray(scores, dtype=float))
    if distinct.size < 2:
        return ScoreKind("continuous")
    gaps = np.diff(distinct)
    step = gaps.min()
    if (gaps.max() - step) <= tol:
        return ScoreKind("discrete-grid", step=float(step))
    return ScoreKind("continuous")


def normalize(raw_scores, raw_outcomes, treatments, outcome_kind):
    """Rescale raw data to the units every prior is calibrated for.

    Scores are divided by their observed range; continuous outcomes are divided
    by their standard deviation; binary and bounded outcomes pass through
    untouched.  Returns the dataset plus the two scale records needed to
    back-transform reported estimands.
    """
    raw_scores = np.asarray(raw_scores, dtype=float)
    raw_outcomes = np.asarray(raw_outcomes, dtype=float)
    treatments = np.asarray(treatments, dtype=float)
    if raw_scores.shape[0] != raw_outcomes.shape[0] or raw_scores.shape[0] != treatments.shape[0]:
        raise DataError("scores, outcomes and treatments must have equal length")
    if isinstance(outcome_kind, str):
        outcome_kind = OutcomeKind(outcome_kind)
    span = raw_scores.max() - raw_scores.min()
    if not span > 0:
        raise DataError("degenerate score range")
    score_scale = ScoreScale(range=float(span))
    scores = raw_scores / span

    if outcome_kind.kind == "continuous":
        sd = float(np.std(raw_outcomes))
        outcome_scale = OutcomeScale(scale=sd if sd > 0 else 1.0)
    else:
        outcome_scale = OutcomeScale()
    outcomes = raw_outcomes / outcome_scale.scale

    dataset = Dataset(
        scores=scores,
        treatments=treatments,
        outcomes=outcomes,
        score_kind=detect_score_kind(scores),
        outcome_kind=outcome_kind,
        support=(float(scores.min()), float(scores.max())),
    )
    return dataset, score_scale, outcome_scale


def _ball_radii(distinct):
    # Smallest radius around each interior point covering one distinct value
    # strictly below and one strictly above it.
    left = distinct[1:-1] - distinct[:-2]
    right = distinct[2:] - distinct[1:-1]
    return np.maximum(left, right)


def compute_support_bounds(dataset, n=25, radius_quantile=1.0):
    """Derive (d_x, l_n, u_n) from the observed scores.

    ``l_n`` is the n-th smallest score and ``u_n`` the n-th largest, so at
    least ``n`` observations sit at or outside each bound.  For grid scores
    ``d_x`` is the grid step; for continuous scores it is the
    ``radius_quantile`` quantile (default: maximum) of the nearest-neighbour
    ball radii, the most conservative choice that keeps any window of width
    ``d_x`` populated.
    """
    scores = np.sort(dataset.scores)
    distinct = np.unique(scores)
    if distinct.size < 2 * n + 2:
        raise DataError(f"need at least {2 * n + 2} distinct score values, got {distinct.size}")
    if dataset.score_kind.kind == "discrete-grid":
        d_x = float(dataset.score_kind.step)
    else:
        radii = _ball_radii(distinct)
        d_x = float(np.quantile(radii, radius_quantile))
    l_n = float(scores[n - 1])
    u_n = float(scores[-n])
    return SupportBounds(d_x=d_x, l_n=l_n, u_n=u_n, n=n,
                         lo=dataset.support[0], hi=dataset.support[1])


def trim(dataset, lo, hi):
    """Restrict the dataset to scores in [lo, hi] without re-normalizing.

    The score scale is deliberately preserved so cutoff posteriors from the
    trimmed and full fits remain directly comparable.
    """
    if not lo < hi:
        raise DataError("trim bounds must satisfy lo < hi")
    s_lo, s_hi = dataset.support
    lo, hi = max(lo, s_lo), min(hi, s_hi)
    keep = (dataset.scores >= lo) & (dataset.scores <= hi)
    if not keep.any():
        raise DataError("trim removed every row")
    return replace(
        dataset,
        scores=dataset.scores[keep],
        treatments=dataset.treatments[keep],
        outcomes=dataset.outcomes[keep],
        support=(float(lo), float(hi)),
    )


def _bin_one_side(x, values, lo, hi, bins):
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    sums = np.bincount(idx, weights=values, minlength=bins)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, means, counts


def bin_series(dataset, split_point, bins_per_side):
    """Equal-width bins on each side of ``split_point``; no bin straddles it.

    Returns one series for treatment take-up and one for outcomes.
    """
    lo, hi = dataset.support
    if not lo < split_point < hi:
        raise DataError("split point must lie strictly inside the support")
    if bins_per_side < 1:
        raise DataError("bins_per_side must be at least 1")
    left = dataset.scores < split_point
    out = []
    for values in (dataset.treatments, dataset.outcomes):
        cl, ml, nl = _bin_one_side(dataset.scores[left], values[left], lo, split_point, bins_per_side)
        cr, mr, nr = _bin_one_side(dataset.scores[~left], values[~left], split_point, hi, bins_per_side)
        out.append(BinnedSeries(
            bin_centers=np.concatenate([cl, cr]),
            bin_means=np.concatenate([ml, mr]),
            bin_counts=np.concatenate([nl, nr]),
            split_point=float(split_point),
        ))
    return out[0], out[1]


def read_csv(path):
    """Read a `score,treatment,outcome` CSV into raw arrays.

    Missing values and non-0/1 treatments are rejected.
    """
    scores, treatments, outcomes = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"score", "treatment", "outcome"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise DataError(f"expected CSV header score,treatment,outcome, got {reader.fieldnames}")
        for i, row in enumerate(reader):
            try:
                s, t, y = row["score"], row["treatment"], row["outcome"]
                if s in (None, "") or t in (None, "") or y in (None, ""):
                    raise ValueError("missing value")
                scores.append(float(s))
                treatments.append(float(t))
                outcomes.append(float(y))
            except (TypeError, ValueError) as exc:
                raise DataError(f"bad row {i + 2}: {exc}") from exc
    if not scores:
        raise DataError("CSV contains no data rows")
    treatments = np.asarray(treatments)
    if not np.isin(treatments, (0.0, 1.0)).all():
        raise DataError("treatment column must be 0/1")
    return np.asarray(scores), treatments, np.asarray(outcomes)


def write_binned_csv(path, treatment_series, outcome_series):
    """Emit binned series as `bin_center,mean,count,side,channel` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "mean", "count", "side", "channel"])
        for channel, series in (("treatment", treatment_series), ("outcome", outcome_series)):
            for c, m, k in zip(series.bin_centers, series.bin_means, series.bin_counts):
                side = "left" if c < series.split_point else "right"
                writer.writerow([repr(float(c)), "" if np.isnan(m) else repr(float(m)), int(k), side, channel])
