"""Posterior samplers for the cutoff/compliance/effect model.

Three ways to combine the treatment and outcome models are supported:

* ``joint``: a single posterior over all parameters, so outcome data feeds
  back into the cutoff location;
* ``treatment-only``: the take-up model alone;
* ``cut``: the treatment posterior is sampled first and its (c, j) draws are
  plugged, one per sweep, into the outcome model (one-way information flow).

The heavy lifting happens in the jitted kernels of ``_kernels``; this module
owns configuration, initialization, chain orchestration, and the exhaustive
grid oracle the sampler is audited against in the tests.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import special

from . import _kernels as K
from .diagnostics import Diagnostics, effective_sample_size, split_rhat
from .outcome import (
    BoundedOutcomeSpec,
    OutcomeParamsBinary,
    OutcomeParamsContinuous,
    log_lik_outcome,
    log_prior_outcome_binary,
    log_prior_outcome_continuous,
    sample_outcome_params_binary,
    sample_outcome_params_continuous,
)
from .treatment import (
    CutoffPrior,
    TreatmentParams,
    TreatmentPriorSpec,
    log_lik_treatment,
    log_prior_treatment,
    sample_treatment_params,
)

MODES = ("joint", "treatment-only", "cut")

TREAT_COLS = ("c", "j", "k_l", "k_r", "a2l", "b2l", "a1l", "a1r", "a2r")
OUT_COLS_CONT = ("kappa_l", "kappa_r", "al0", "al1", "al2", "al3",
                 "ar0", "ar1", "ar2", "ar3", "rho1_l", "rho2_l", "rho1_r", "rho2_r")
OUT_COLS_BIN = ("kappa_l", "kappa_r", "fl0", "fl1", "fl2", "fl3",
                "fr0", "fr1", "fr2", "fr3")
BLOCK_NAMES = ("cutoff", "jump", "windows", "treatment_coeffs",
               "outcome_windows", "left_coeffs", "right_coeffs", "precisions")


class SamplerError(RuntimeError):
    pass


class InitializationError(SamplerError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    burn_in: int = 10000
    adapt: int = 1000
    draws: int = 25000
    seed: int = 0
    mode: str = "joint"
    smoothing_s: float = 100.0
    binary_eps: float = 0.01
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1:
            raise ValueError("chains and draws must be positive")
        if self.burn_in < 0 or self.adapt < 0:
            raise ValueError("burn_in and adapt must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class PosteriorDraws:
    """Named per-chain draw matrices plus per-block acceptance rates."""

    columns: tuple[str, ...]
    chains: list[np.ndarray]
    acceptance: dict[str, list[float]]
    mode: str
    outcome_kind: str | None = None
    config: SamplerConfig | None = None
    c_discrete: bool = False

    def __post_init__(self):
        self._index = {name: i for i, name in enumerate(self.columns)}

    @property
    def n_draws(self):
        return sum(ch.shape[0] for ch in self.chains)

    def column(self, name, chain=None):
        i = self._index[name]
        if chain is not None:
            return self.chains[chain][:, i]
        return np.concatenate([ch[:, i] for ch in self.chains])

    def per_chain(self, name):
        i = self._index[name]
        return [ch[:, i] for ch in self.chains]

    def to_frame(self):
        frames = []
        for ci, ch in enumerate(self.chains):
            df = pd.DataFrame(ch, columns=list(self.columns))
            df.insert(0, "iteration", np.arange(ch.shape[0]))
            df.insert(0, "chain", ci)
            frames.append(df)
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def mean_acceptance(self):
        return {b: float(np.mean(r)) for b, r in self.acceptance.items()}


_OKIND_CODE = {"continuous": K.OK_CONT, "binary": K.OK_BIN, "bounded": K.OK_BOUND}


def _build_packs(dataset, priors, config, joint):
    sb = priors.support_bounds
    okind = dataset.outcome_kind.kind if joint else "continuous"
    ppack = np.zeros(K.PPACK_LEN)
    ppack[K.P_LO], ppack[K.P_HI] = sb.lo, sb.hi
    ppack[K.P_ETA] = priors.eta
    ppack[K.P_DX], ppack[K.P_LN], ppack[K.P_UN] = sb.d_x, sb.l_n, sb.u_n
    ppack[K.P_S] = config.smoothing_s
    ppack[K.P_OKIND] = _OKIND_CODE[okind] if joint else K.OK_NONE
    if okind == "bounded":
        ppack[K.P_BLO] = dataset.outcome_kind.lo
        ppack[K.P_BHI] = dataset.outcome_kind.hi
    ppack[K.P_EPS] = config.binary_eps
    cp = priors.cutoff_prior
    if cp.variant == "uniform":
        ppack[K.P_CKIND] = 0
        ppack[K.P_CLO], ppack[K.P_CHI] = cp.lo, cp.hi
        c_points = np.empty(0)
        c_weights = np.empty(0)
    elif cp.variant == "scaled-beta":
        ppack[K.P_CKIND] = 1
        ppack[K.P_CLO], ppack[K.P_CHI] = cp.lo, cp.hi
        ppack[K.P_CA], ppack[K.P_CB] = cp.alpha, cp.beta
        ppack[K.P_CLB] = special.betaln(cp.alpha, cp.beta)
        c_points = np.empty(0)
        c_weights = np.empty(0)
    else:
        ppack[K.P_CKIND] = 2
        c_points = np.asarray(cp.points, dtype=float)
        c_weights = np.asarray(cp.weights, dtype=float)
    with np.errstate(divide="ignore"):
        c_logw = np.where(c_weights > 0, np.log(np.maximum(c_weights, 1e-300)), -np.inf)
    c_cumw = np.cumsum(c_weights) if c_weights.size else np.empty(0)
    return ppack, c_points, c_logw, c_weights, c_cumw


def _n_blocks(joint, okind):
    if not joint:
        return 4
    return 7 if okind == "binary" else 8


def _initial_scales(priors):
    """Per-coordinate starting step sizes; adaptation refines them."""
    sb = priors.support_bounds
    span = sb.u_n - sb.l_n
    cp = priors.cutoff_prior
    c_scale = max(0.02 * (cp.hi - cp.lo), 1e-3) if cp.hi > cp.lo else 1.0
    scales = np.full(K.NSTATE, 0.05)
    scales[0] = c_scale
    scales[2] = scales[3] = 0.05 * span
    scales[9] = scales[10] = 0.05 * span
    scales[19:23] = 1.0
    return scales


def params_to_state(tparams, oparams=None):
    s = np.zeros(K.NSTATE)
    s[0:9] = tparams.free
    if isinstance(oparams, OutcomeParamsContinuous):
        s[9:23] = [oparams.kappa_l, oparams.kappa_r,
                   oparams.al0, oparams.al1, oparams.al2, oparams.al3,
                   oparams.ar0, oparams.ar1, oparams.ar2, oparams.ar3,
                   oparams.rho1_l, oparams.rho2_l, oparams.rho1_r, oparams.rho2_r]
    elif isinstance(oparams, OutcomeParamsBinary):
        s[9:19] = [oparams.kappa_l, oparams.kappa_r,
                   oparams.fl0, oparams.fl1, oparams.fl2, oparams.fl3,
                   oparams.fr0, oparams.fr1, oparams.fr2, oparams.fr3]
    return s


def state_to_params(state, outcome_kind=None):
    tparams = TreatmentParams.from_free(*state[0:9])
    if outcome_kind is None:
        return tparams, None
    if outcome_kind == "binary":
        return tparams, OutcomeParamsBinary(*state[9:19])
    return tparams, OutcomeParamsContinuous(*state[9:23])


def log_posterior(state, dataset, priors, mode="joint", smoothing_s=100.0, binary_eps=0.01):
    """Reference (pure numpy) log posterior used to audit the jitted kernels.

    The outcome mean enters with sigmoid-smoothed window edges, matching what
    the sampler targets; -inf encodes any constraint violation.
    """
    joint = mode != "treatment-only"
    okind = dataset.outcome_kind.kind if joint else None
    tparams, oparams = state_to_params(np.asarray(state, dtype=float), okind)
    lp = log_prior_treatment(tparams, priors)
    if not math.isfinite(lp):
        return -math.inf
    if joint:
        if okind == "binary":
            bspec = BoundedOutcomeSpec(0.0, 1.0)
        elif okind == "bounded":
            bspec = BoundedOutcomeSpec(dataset.outcome_kind.lo, dataset.outcome_kind.hi)
        else:
            bspec = None
        if bspec is not None:
            f_l0 = oparams.fl0 if okind == "binary" else oparams.al0
            f_r0 = oparams.fr0 if okind == "binary" else oparams.ar0
            lj = bspec.log_prior_jump(tparams.j, f_l0, f_r0, priors.eta)
            if not math.isfinite(lj):
                return -math.inf
            lp += math.log1p(-priors.eta) + lj  # swap U(eta,1) for the coupled prior
        if okind == "binary":
            lpo = log_prior_outcome_binary(oparams, tparams.c, priors.support_bounds, binary_eps)
        else:
            bounds = bspec if okind == "bounded" else None
            lpo = log_prior_outcome_continuous(oparams, tparams.c, priors.support_bounds, bounds)
        if not math.isfinite(lpo):
            return -math.inf
        lp += lpo + log_lik_outcome(oparams, dataset, tparams.c,
                                    "binary" if okind == "binary" else "continuous",
                                    smoothing=smoothing_s)
    return lp + log_lik_treatment(tparams, dataset)


def _chain_rng(seed, stream, chain):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, chain])))


def _check_prior_feasibility(priors):
    sb = priors.support_bounds
    cp = priors.cutoff_prior
    lo_ok = cp.lo > sb.l_n + sb.d_x
    hi_ok = cp.hi < sb.u_n - sb.d_x
    if not (lo_ok and hi_ok):
        warnings.warn(
            "cutoff prior support reaches into the region where the window "
            "priors are empty; the effective prior is truncated there",
            stacklevel=3,
        )


def _feasible_cutoff(c, sb):
    return (c - sb.l_n > sb.d_x) and (sb.u_n - c > sb.d_x)


def _side_line_fit(x, y, c0, window_lo, window_hi, left):
    """Linear fit of y on (x - c0) inside the window, whole side as fallback."""
    sel = x < c0 if left else x >= c0
    use = sel & (x >= window_lo) & (x <= window_hi)
    if use.sum() < 5:
        use = sel
    xs = x[use] - c0
    ys = y[use]
    if xs.size >= 3 and np.ptp(xs) > 0:
        slope, intercept = np.polyfit(xs, ys, 1)
        resid_var = float(np.var(ys - (intercept + slope * xs)))
    elif ys.size:
        intercept, slope = float(np.mean(ys)), 0.0
        resid_var = float(np.var(ys))
    else:
        intercept, slope, resid_var = 0.0, 0.0, 1.0
    return float(intercept), float(slope), max(resid_var, 1e-10)


def _data_informed_outcome(dataset, c0, sb, rng, okind, eps, bounds):
    """Cheap data-based outcome start: side-wise linear fits plus jitter.

    Cold starts from the diffuse coefficient priors leave chains in absurd
    regions that the burn-in cannot reliably escape; starting from the data
    (windows and precisions included) only moves the starting point, not the
    target.
    """
    x, y = dataset.scores, dataset.outcomes
    kappa_l = rng.uniform(sb.l_n, c0 - sb.d_x)
    kappa_r = rng.uniform(c0 + sb.d_x, sb.u_n)
    i_l, s_l, v_l = _side_line_fit(x, y, c0, kappa_l, c0, left=True)
    i_r, s_r, v_r = _side_line_fit(x, y, c0, c0, kappa_r, left=False)
    if okind == "binary":
        pad = eps + 1e-3
        return OutcomeParamsBinary(
            kappa_l=kappa_l, kappa_r=kappa_r,
            fl0=float(np.clip(i_l + rng.normal(0, 0.02), pad, 1 - pad)), fl1=0.0,
            fl2=float(rng.normal(0, 0.2)), fl3=float(rng.normal(0, 0.2)),
            fr0=float(np.clip(i_r + rng.normal(0, 0.02), pad, 1 - pad)), fr1=0.0,
            fr2=float(rng.normal(0, 0.2)), fr3=float(rng.normal(0, 0.2)),
        )
    if bounds is not None:
        pad = 1e-6 * (bounds.hi - bounds.lo)
        i_l = float(np.clip(i_l, bounds.lo + pad, bounds.hi - pad))
        i_r = float(np.clip(i_r, bounds.lo + pad, bounds.hi - pad))
    rho1_l = min(max(1.0 / v_l, 1e-4), 1e8) * math.exp(rng.normal(0, 0.2))
    rho1_r = min(max(1.0 / v_r, 1e-4), 1e8) * math.exp(rng.normal(0, 0.2))
    jitter = 0.02 * (abs(i_l) + abs(i_r) + 1.0)
    return OutcomeParamsContinuous(
        kappa_l=kappa_l, kappa_r=kappa_r,
        al0=i_l + float(rng.normal(0, jitter)), al1=s_l,
        al2=float(rng.normal(0, 0.1)), al3=float(rng.normal(0, 0.1)),
        ar0=i_r + float(rng.normal(0, jitter)), ar1=s_r,
        ar2=float(rng.normal(0, 0.1)), ar3=float(rng.normal(0, 0.1)),
        rho1_l=rho1_l, rho2_l=rho1_l * float(rng.uniform(0.4, 1.0)),
        rho1_r=rho1_r, rho2_r=rho1_r * float(rng.uniform(0.4, 1.0)),
    )


def init_chains(dataset, priors, config):
    """Initial states: cutoffs from a two-constant pre-fit, rest data-guided.

    Each chain gets one posterior cutoff sample from the changepoint pre-fit;
    treatment parameters come from their conditional priors given that cutoff
    and outcome parameters from side-wise line fits, retried until the log
    posterior is finite (cap 1000 attempts).
    """
    joint = config.mode != "treatment-only"
    okind = dataset.outcome_kind.kind if joint else None
    cp = priors.cutoff_prior
    if cp.is_discrete and cp.points.size == 1:
        tc_c = np.asarray([cp.points[0]])
    else:
        tc_cfg = SamplerConfig(chains=1, burn_in=500, adapt=500, draws=1000,
                               seed=config.seed, mode="treatment-only")
        tc = two_constant_posterior(dataset, cp, priors.eta, tc_cfg)
        tc_c = tc.column("c")
    ppack, c_points, c_logw, _, _ = _build_packs(dataset, priors, config, joint)
    bounds = (BoundedOutcomeSpec(dataset.outcome_kind.lo, dataset.outcome_kind.hi)
              if joint and okind == "bounded" else None)
    states = []
    c_indices = []
    for chain in range(config.chains):
        rng = _chain_rng(config.seed, 17, chain)
        state = None
        for _ in range(1000):
            c0 = float(tc_c[rng.integers(tc_c.size)])
            if not _feasible_cutoff(c0, priors.support_bounds):
                continue
            oparams = None
            min_jump = None
            if joint:
                oparams = _data_informed_outcome(
                    dataset, c0, priors.support_bounds, rng, okind, config.binary_eps, bounds)
                if okind == "binary":
                    min_jump = abs(oparams.fr0 - oparams.fl0)
                elif okind == "bounded":
                    min_jump = abs(oparams.ar0 - oparams.al0) / (bounds.hi - bounds.lo)
            spec_c0 = replace(priors, cutoff_prior=CutoffPrior.point_mass(c0))
            tparams = sample_treatment_params(spec_c0, rng, min_jump=min_jump)
            cand = params_to_state(tparams, oparams)
            cand[0] = c0
            lp = K._lp_state(cand, ppack, c_points, c_logw, joint)
            if math.isfinite(lp):
                state = cand
                break
        if state is None:
            raise InitializationError("no finite-density initial state found")
        states.append(state)
        if cp.is_discrete:
            c_indices.append(int(np.argmin(np.abs(cp.points - state[0]))))
        else:
            c_indices.append(-1)
    return np.asarray(states), np.asarray(c_indices, dtype=np.int64), tc_c


def _materialize(raw_chains, joint, okind):
    """Turn raw state matrices into named columns incl. derived quantities."""
    if not joint:
        columns = TREAT_COLS + ("b1l", "b1r", "b2r")
    elif okind == "binary":
        columns = TREAT_COLS + OUT_COLS_BIN + ("b1l", "b1r", "b2r", "tau")
    else:
        columns = TREAT_COLS + OUT_COLS_CONT + ("b1l", "b1r", "b2r", "tau")
    out = []
    for raw in raw_chains:
        c, j, kl, kr = raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3]
        a2l, b2l, a1l, a1r, a2r = raw[:, 4], raw[:, 5], raw[:, 6], raw[:, 7], raw[:, 8]
        b1l = (c - kl) * (a2l - a1l) + b2l
        b1r = (a1l - a1r) * c + b1l + j
        b2r = (c + kr) * (a1r - a2r) + b1r
        cols = [raw[:, :9]]
        if joint:
            cols.append(raw[:, 9:19] if okind == "binary" else raw[:, 9:23])
        cols.append(np.column_stack([b1l, b1r, b2r]))
        if joint:
            tau = (raw[:, 15] - raw[:, 11]) / j
            cols.append(tau[:, None])
        out.append(np.hstack(cols))
    return columns, out


def run(dataset, priors, config):
    """Sample the posterior selected by ``config.mode``.

    Chains are independent (and run in parallel when ``config.workers`` > 1);
    the result is deterministic given (seed, chains) regardless of worker
    count.  Returns ``(PosteriorDraws, Diagnostics)``.
    """
    if config.mode == "cut":
        draws = cut_run(dataset, priors, config)
        return draws, _diagnose(draws)
    joint = config.mode == "joint"
    okind = dataset.outcome_kind.kind if joint else None
    _check_prior_feasibility(priors)
    ppack, c_points, c_logw, c_weights, c_cumw = _build_packs(dataset, priors, config, joint)
    n_blocks = _n_blocks(joint, okind)
    states, c_indices, _ = init_chains(dataset, priors, config)
    scales = _initial_scales(priors)
    x = np.ascontiguousarray(dataset.scores, dtype=float)
    t = np.ascontiguousarray(dataset.treatments, dtype=float)
    y = np.ascontiguousarray(dataset.outcomes, dtype=float)

    def one_chain(i):
        gen = _chain_rng(config.seed, 2, i)
        return K.run_chain(gen, x, t, y, ppack, c_points, c_logw, c_weights, c_cumw,
                           joint, n_blocks, states[i], scales.copy(),
                           config.adapt, config.burn_in, config.draws, c_indices[i])

    results = _map_chains(one_chain, config)
    raw_chains = [r[0] for r in results]
    acceptance = _acceptance_rates(results, n_blocks)
    if all(rate == 0.0 for rates in acceptance.values() for rate in rates):
        raise SamplerError("every proposal was rejected; adaptation failed")
    columns, chains = _materialize(raw_chains, joint, okind)
    draws = PosteriorDraws(columns=columns, chains=chains, acceptance=acceptance,
                           mode=config.mode, outcome_kind=okind, config=config,
                           c_discrete=priors.cutoff_prior.is_discrete)
    return draws, _diagnose(draws)


def _map_chains(fn, config):
    indices = range(config.chains)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            return list(pool.map(fn, indices))
    return [fn(i) for i in indices]


def _acceptance_rates(results, n_blocks):
    acceptance = {}
    for b in range(n_blocks):
        rates = []
        for r in results:
            acc, prop = r[1], r[2]
            rates.append(float(acc[b] / prop[b]) if prop[b] > 0 else 1.0)
        acceptance[BLOCK_NAMES[b]] = rates
    return acceptance


def _diagnose(draws):
    rhat = {}
    ess = {}
    for name in draws.columns:
        per_chain = draws.per_chain(name)
        if all(np.ptp(ch) == 0 for ch in per_chain):
            rhat[name] = 1.0
            ess[name] = float(draws.n_draws)
        else:
            rhat[name] = split_rhat(per_chain)
            ess[name] = effective_sample_size(per_chain)
    return Diagnostics(rhat=rhat, ess=ess, acceptance=draws.mean_acceptance())


def cut_run(dataset, priors, config):
    """Two-stage cut posterior: treatment fit first, outcome fit on plugged draws.

    Stage two warms up at each chain's first plugged cutoff and then advances
    one stage-one draw per sweep, so outcome draws stay paired with the
    treatment draws they condition on.
    """
    okind = dataset.outcome_kind.kind
    stage1_cfg = replace(config, mode="treatment-only")
    stage1 = run(dataset, priors, stage1_cfg)[0]
    ppack, c_points, c_logw, _, _ = _build_packs(dataset, priors, config, joint=True)
    n_blocks = _n_blocks(True, okind)
    scales = _initial_scales(priors)
    x = np.ascontiguousarray(dataset.scores, dtype=float)
    y = np.ascontiguousarray(dataset.outcomes, dtype=float)
    sb = priors.support_bounds

    def one_chain(i):
        c_seq = np.ascontiguousarray(stage1.column("c", chain=i))
        j_seq = np.ascontiguousarray(stage1.column("j", chain=i))
        rng = _chain_rng(config.seed, 23, i)
        state0 = None
        for _ in range(1000):
            c0 = float(c_seq[0])
            if not _feasible_cutoff(c0, sb):
                raise InitializationError("plugged cutoff leaves no room for outcome windows")
            if okind == "binary":
                op = sample_outcome_params_binary(c0, sb, rng, config.binary_eps)
            else:
                bounds = (BoundedOutcomeSpec(dataset.outcome_kind.lo, dataset.outcome_kind.hi)
                          if okind == "bounded" else None)
                op = sample_outcome_params_continuous(c0, sb, rng, bounds)
            cand = params_to_state(TreatmentParams.from_free(c0, float(j_seq[0]), *([0.0] * 7)), op)
            cand[0], cand[1] = c0, j_seq[0]
            if math.isfinite(K._lp_cut_stage2(cand, ppack)):
                state0 = cand
                break
        if state0 is None:
            raise InitializationError("no finite-density stage-2 initial state found")
        gen = _chain_rng(config.seed, 29, i)
        out_draws, acc, prop = K.run_cut_stage2(
            gen, x, y, ppack, c_seq, j_seq, n_blocks, state0, scales.copy(),
            config.adapt, config.burn_in)
        return out_draws, acc, prop

    results = _map_chains(one_chain, config)
    # merge stage-1 treatment columns with stage-2 outcome columns, row-paired
    raw_chains = []
    for i, r in enumerate(results):
        merged = r[0].copy()
        for col_idx, name in enumerate(TREAT_COLS):
            merged[:, col_idx] = stage1.column(name, chain=i)
        raw_chains.append(merged)
    acceptance = {}
    for b in range(4, n_blocks):
        acceptance[BLOCK_NAMES[b]] = [
            float(r[1][b] / r[2][b]) if r[2][b] > 0 else 1.0 for r in results]
    columns, chains = _materialize(raw_chains, True, okind)
    return PosteriorDraws(columns=columns, chains=chains, acceptance=acceptance,
                          mode="cut", outcome_kind=okind, config=config,
                          c_discrete=priors.cutoff_prior.is_discrete)


def two_constant_posterior(dataset, cutoff_prior, eta=0.2, config=None):
    """Changepoint posterior of constant take-up levels either side of c.

    Used both to initialize the main sampler and as the naive plug-in cutoff
    estimator.  Returns draws with columns (c, level_l, level_r).
    """
    if config is None:
        config = SamplerConfig(chains=2, burn_in=1000, adapt=500, draws=5000,
                               mode="treatment-only")
    order = np.argsort(dataset.scores, kind="stable")
    xs = np.ascontiguousarray(dataset.scores[order])
    t_prefix = np.concatenate([[0.0], np.cumsum(dataset.treatments[order])])
    ppack = np.zeros(K.PPACK_LEN)
    ppack[K.P_ETA] = eta
    cp = cutoff_prior
    if cp.variant == "uniform":
        ppack[K.P_CKIND] = 0
        ppack[K.P_CLO], ppack[K.P_CHI] = cp.lo, cp.hi
        c_points = np.empty(0)
        c_weights = np.empty(0)
    elif cp.variant == "scaled-beta":
        ppack[K.P_CKIND] = 1
        ppack[K.P_CLO], ppack[K.P_CHI] = cp.lo, cp.hi
        ppack[K.P_CA], ppack[K.P_CB] = cp.alpha, cp.beta
        ppack[K.P_CLB] = special.betaln(cp.alpha, cp.beta)
        c_points = np.empty(0)
        c_weights = np.empty(0)
    else:
        ppack[K.P_CKIND] = 2
        c_points = np.asarray(cp.points, dtype=float)
        c_weights = np.asarray(cp.weights, dtype=float)
    with np.errstate(divide="ignore"):
        c_logw = np.where(c_weights > 0, np.log(np.maximum(c_weights, 1e-300)), -np.inf)
    c_cumw = np.cumsum(c_weights) if c_weights.size else np.empty(0)

    def one_chain(i):
        rng = _chain_rng(config.seed, 31, i)
        if cp.is_discrete:
            cidx = int(rng.choice(c_points.size, p=c_weights / c_weights.sum()))
            c0 = float(c_points[cidx])
        else:
            cidx = -1
            c0 = float(cp.sample(rng))
        left = dataset.scores < c0
        th_l = float(dataset.treatments[left].mean()) if left.any() else 0.25
        th_r = float(dataset.treatments[~left].mean()) if (~left).any() else 0.75
        th_l = min(max(th_l, 0.005), 1.0 - eta - 0.005)
        th_r = min(max(th_r, th_l + eta + 1e-3), 0.999)
        state0 = np.array([c0, th_l, th_r])
        scales0 = np.array([max(0.02 * (cp.hi - cp.lo), 1e-3), 0.05, 0.05])
        gen = _chain_rng(config.seed, 37, i)
        return K.run_two_constant(gen, xs, t_prefix, ppack, c_points, c_logw,
                                  c_weights, c_cumw, state0, scales0,
                                  config.adapt, config.burn_in, config.draws, cidx)

    results = _map_chains(one_chain, config)
    acceptance = {
        "cutoff": [float(r[1][0] / r[2][0]) if r[2][0] > 0 else 1.0 for r in results],
        "levels": [float(r[1][1] / r[2][1]) if r[2][1] > 0 else 1.0 for r in results],
    }
    return PosteriorDraws(columns=("c", "level_l", "level_r"),
                          chains=[r[0] for r in results], acceptance=acceptance,
                          mode="two-constant", config=config,
                          c_discrete=cutoff_prior.is_discrete)


def lower_bound_pileup(jump_samples, eta, margin=0.02):
    """Fraction of jump draws within ``margin`` of the lower bound ``eta``.

    A large value signals that the bound, not the data, is driving the
    compliance estimate (misspecified eta or no genuine jump).
    """
    jump_samples = np.asarray(jump_samples)
    return float(np.mean(jump_samples <= eta + margin))


@dataclass(frozen=True)
class GridPosterior:
    names: tuple[str, ...]
    grids: tuple[np.ndarray, ...]
    probs: np.ndarray

    def marginal(self, name):
        axis = self.names.index(name)
        other = tuple(i for i in range(self.probs.ndim) if i != axis)
        return self.probs.sum(axis=other)


def grid_oracle_posterior(log_post, grids, cap=200_000):
    """Exact posterior table by exhaustive evaluation over a product grid.

    ``grids`` maps parameter names to 1-d arrays; ``log_post`` takes one value
    per parameter (same order).  Intended for reduced test models only, hence
    the safety cap on the grid size.
    """
    names = tuple(grids)
    arrays = tuple(np.asarray(grids[n], dtype=float) for n in names)
    shape = tuple(a.size for a in arrays)
    total = int(np.prod(shape))
    if total > cap:
        raise ValueError(f"grid of {total} points exceeds the safety cap {cap}")
    logp = np.empty(shape)
    for idx in np.ndindex(shape):
        logp[idx] = log_post(*(arrays[d][idx[d]] for d in range(len(arrays))))
    flat = logp.reshape(-1)
    m = flat.max()
    if not np.isfinite(m):
        raise ValueError("log posterior is -inf everywhere on the grid")
    probs = np.exp(flat - m)
    probs /= probs.sum()
    return GridPosterior(names=names, grids=arrays, probs=probs.reshape(shape))


def two_constant_grid_posterior(dataset, cutoff_prior, eta=0.2, n_theta=2001):
    """Cutoff marginal of the two-constant model by quadrature over the levels.

    The level pair is integrated over the triangle {0 <= l, l + eta <= r <= 1}
    with an exact incomplete-beta inner integral and a midpoint outer rule, so
    this is an independent check on the sampler, not a re-use of it.
    """
    cp = cutoff_prior
    if not cp.is_discrete:
        raise ValueError("the quadrature oracle expects a discrete cutoff prior")
    xs = np.sort(dataset.scores)
    t_sorted = dataset.treatments[np.argsort(dataset.scores, kind="stable")]
    prefix = np.concatenate([[0.0], np.cumsum(t_sorted)])
    n = xs.size
    h = (1.0 - eta) / n_theta
    th_l = (np.arange(n_theta) + 0.5) * h
    log_marg = np.empty(cp.points.size)
    for k, c in enumerate(cp.points):
        n_l = int(np.searchsorted(xs, c))
        s_l = prefix[n_l]
        s_r = prefix[n] - s_l
        n_r = n - n_l
        a, b = s_r + 1.0, n_r - s_r + 1.0
        with np.errstate(divide="ignore"):
            tail = special.betaincc(a, b, np.minimum(th_l + eta, 1.0))
            log_tail = special.betaln(a, b) + np.log(tail)
            integrand = s_l * np.log(th_l) + (n_l - s_l) * np.log1p(-th_l) + log_tail
        log_marg[k] = special.logsumexp(integrand) + math.log(h) + math.log(cp.weights[k])
    probs = np.exp(log_marg - log_marg.max())
    return probs / probs.sum()
