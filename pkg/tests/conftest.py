import numpy as np
import pytest

from lotta.data import Dataset, OutcomeKind, ScoreKind, SupportBounds
from lotta.treatment import CutoffPrior, TreatmentPriorSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def unit_bounds():
    # comfortable synthetic support bounds on [0, 1]
    return SupportBounds(d_x=0.01, l_n=0.08, u_n=0.92, n=25, lo=0.0, hi=1.0)


@pytest.fixture
def unit_priors(unit_bounds):
    return TreatmentPriorSpec(cutoff_prior=CutoffPrior.uniform(0.2, 0.8),
                              support_bounds=unit_bounds, eta=0.2)


def make_dataset(scores, treatments, outcomes, outcome_kind="continuous", support=None):
    scores = np.asarray(scores, dtype=float)
    if support is None:
        support = (float(scores.min()), float(scores.max()))
    return Dataset(scores=scores, treatments=np.asarray(treatments, dtype=float),
                   outcomes=np.asarray(outcomes, dtype=float),
                   score_kind=ScoreKind("continuous"),
                   outcome_kind=OutcomeKind(outcome_kind) if isinstance(outcome_kind, str)
                   else outcome_kind,
                   support=support)


@pytest.fixture
def step_dataset(rng):
    # crisp take-up step 0.1 -> 0.9 at 0 on [-1, 1]
    n = 400
    x = np.sort(rng.uniform(-1, 1, n))
    p = np.where(x < 0, 0.1, 0.9)
    t = (rng.random(n) < p).astype(float)
    y = 0.2 * x + 0.3 * (x >= 0) + 0.05 * rng.standard_normal(n)
    return make_dataset(x, t, y)
