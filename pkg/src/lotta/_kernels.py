"""Jitted sampler kernels.

Flat-array mirrors of the model densities in ``treatment.py`` / ``outcome.py``
plus the Metropolis-within-Gibbs sweep.  The Python modules stay the readable
reference; the test suite pins this module to them term by term, so any edit
here must keep the two in lockstep.

The sweep is Metropolis-within-Gibbs over the blocks (cutoff, jump, take-up
windows, take-up coefficients, outcome windows, left/right outcome
coefficients, precisions).  Each block gets a Gaussian random-walk proposal
whose covariance is learned from the chain during the adapt+burn phase and
whose overall scale follows a Robbins-Monro recursion toward 30% acceptance;
both freeze when sampling starts.  The learned covariance matters: the cubic
outcome coefficients are strongly collinear and neither a shared block scale
nor independent per-coordinate walks mix acceptably.

State vector layout (23 slots, unused slots stay 0):

    0 c    1 j    2 k_l   3 k_r   4 a2l   5 b2l   6 a1l   7 a1r   8 a2r
    9 kappa_l   10 kappa_r
    11..14 al0 al1 al2 al3   (binary: fl0 fl1 fl2 fl3)
    15..18 ar0 ar1 ar2 ar3   (binary: fr0 fr1 fr2 fr3)
    19 rho1_l   20 rho2_l   21 rho1_r   22 rho2_r

Prior pack layout (``ppack``):

    0 lo  1 hi  2 eta  3 d_x  4 l_n  5 u_n  6 smoothing_s
    7 outcome kind (0 none, 1 continuous, 2 binary, 3 bounded)
    8 bound_lo  9 bound_hi  10 eps
    11 cutoff prior kind (0 uniform, 1 scaled-beta, 2 discrete)
    12 c_lo  13 c_hi  14 c_alpha  15 c_beta  16 log B(alpha, beta)
"""

import math

import numpy as np
from numba import njit

NSTATE = 23
LOG_2PI = math.log(2.0 * math.pi)

P_LO, P_HI, P_ETA, P_DX, P_LN, P_UN, P_S = 0, 1, 2, 3, 4, 5, 6
P_OKIND, P_BLO, P_BHI, P_EPS = 7, 8, 9, 10
P_CKIND, P_CLO, P_CHI, P_CA, P_CB, P_CLB = 11, 12, 13, 14, 15, 16
PPACK_LEN = 17

OK_NONE, OK_CONT, OK_BIN, OK_BOUND = 0, 1, 2, 3

N_BLOCKS = 8
BLOCK_COORDS = np.array([
    [0, -1, -1, -1, -1],
    [1, -1, -1, -1, -1],
    [2, 3, -1, -1, -1],
    [4, 5, 6, 7, 8],
    [9, 10, -1, -1, -1],
    [11, 12, 13, 14, -1],
    [15, 16, 17, 18, -1],
    [19, 20, 21, 22, -1],
], dtype=np.int64)
BLOCK_SIZES = np.array([1, 1, 2, 5, 2, 4, 4, 4], dtype=np.int64)
# which likelihood pieces a block touches: treatment, outcome-left, outcome-right
BLOCK_T = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=np.int64)
BLOCK_L = np.array([1, 0, 0, 0, 1, 1, 0, 1], dtype=np.int64)
BLOCK_R = np.array([1, 0, 0, 0, 1, 0, 1, 1], dtype=np.int64)


@njit(cache=True, nogil=True)
def _expit(z):
    if z > 50.0:
        return 1.0
    if z < -50.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-z))


@njit(cache=True, nogil=True)
def _log_pdf_cutoff(c, ppack, c_points, c_logw):
    kind = int(ppack[P_CKIND])
    if kind == 0:
        if c < ppack[P_CLO] or c > ppack[P_CHI]:
            return -np.inf
        return -math.log(ppack[P_CHI] - ppack[P_CLO])
    if kind == 1:
        lo, hi = ppack[P_CLO], ppack[P_CHI]
        if not (lo < c < hi):
            return -np.inf
        u = (c - lo) / (hi - lo)
        return ((ppack[P_CA] - 1.0) * math.log(u) + (ppack[P_CB] - 1.0) * math.log1p(-u)
                - ppack[P_CLB] - math.log(hi - lo))
    for i in range(c_points.size):
        if abs(c_points[i] - c) <= 1e-12:
            return c_logw[i]
    return -np.inf


@njit(cache=True, nogil=True)
def _lp_jump(state, ppack, joint):
    # U(lb, 1) on the jump; bounded/binary outcomes raise lb to |dr0 - dl0| / range
    j = state[1]
    lb = ppack[P_ETA]
    okind = int(ppack[P_OKIND])
    if joint and (okind == OK_BIN or okind == OK_BOUND):
        span = 1.0 if okind == OK_BIN else ppack[P_BHI] - ppack[P_BLO]
        diff = abs(state[15] - state[11]) / span
        if diff > lb:
            lb = diff
    if lb >= 1.0 or j < lb or j > 1.0:
        return -np.inf
    return -math.log1p(-lb)


@njit(cache=True, nogil=True)
def _lp_treat_part(state, ppack, c_points, c_logw):
    c, j, kl, kr = state[0], state[1], state[2], state[3]
    a2l, b2l, a1l, a1r, a2r = state[4], state[5], state[6], state[7], state[8]
    lo, hi = ppack[P_LO], ppack[P_HI]
    dx, ln, un = ppack[P_DX], ppack[P_LN], ppack[P_UN]
    lp = _log_pdf_cutoff(c, ppack, c_points, c_logw)
    if lp == -np.inf:
        return -np.inf
    wl = c - ln
    wr = un - c
    if not (wl > dx and dx <= kl <= wl):
        return -np.inf
    if not (wr > dx and dx <= kr <= wr):
        return -np.inf
    lp -= math.log(wl - dx) + math.log(wr - dx)
    den1 = c - kl - lo
    if den1 <= 0.0:
        return -np.inf
    hi1 = (1.0 - j) / den1
    if not (hi1 > 0.0 and 0.0 <= a2l <= hi1):
        return -np.inf
    lp -= math.log(hi1)
    lo2 = -a2l * lo
    hi2 = 1.0 - j - a2l * (c - kl)
    if not (hi2 > lo2 and lo2 <= b2l <= hi2):
        return -np.inf
    lp -= math.log(hi2 - lo2)
    hi3 = (1.0 - j - a2l * (c - kl) - b2l) / kl
    if not (hi3 > 0.0 and 0.0 <= a1l <= hi3):
        return -np.inf
    lp -= math.log(hi3)
    b1l = (c - kl) * (a2l - a1l) + b2l
    hi4 = (1.0 - a1l * c - b1l - j) / kr
    if not (hi4 > 0.0 and 0.0 <= a1r <= hi4):
        return -np.inf
    lp -= math.log(hi4)
    b1r = (a1l - a1r) * c + b1l + j
    den5 = hi - c - kr
    if den5 <= 0.0:
        return -np.inf
    hi5 = (1.0 - b1r - a1r * (c + kr)) / den5
    if not (hi5 > 0.0 and 0.0 <= a2r <= hi5):
        return -np.inf
    lp -= math.log(hi5)
    return lp


@njit(cache=True, nogil=True)
def _normal_logpdf(value, sd):
    return -math.log(sd) - 0.5 * LOG_2PI - 0.5 * (value / sd) ** 2


@njit(cache=True, nogil=True)
def _lp_out_part(state, ppack):
    c = state[0]
    okind = int(ppack[P_OKIND])
    dx, ln, un = ppack[P_DX], ppack[P_LN], ppack[P_UN]
    kap_l, kap_r = state[9], state[10]
    wl = c - dx - ln
    wr = un - c - dx
    if wl <= 0.0 or wr <= 0.0:
        return -np.inf
    if not (ln <= kap_l <= c - dx and c + dx <= kap_r <= un):
        return -np.inf
    lp = -math.log(wl) - math.log(wr)
    sd_l = 100.0 / math.sqrt(c - kap_l)
    sd_r = 100.0 / math.sqrt(kap_r - c)
    if okind == OK_BIN:
        eps = ppack[P_EPS]
        fl0, fl1 = state[11], state[12]
        fr0, fr1 = state[15], state[16]
        if not (eps <= fl0 <= 1.0 - eps and eps <= fr0 <= 1.0 - eps):
            return -np.inf
        edge_l = fl0 - fl1 * (c - kap_l)
        edge_r = fr0 + fr1 * (kap_r - c)
        if not (eps <= edge_l <= 1.0 - eps and eps <= edge_r <= 1.0 - eps):
            return -np.inf
        lp -= 2.0 * math.log(1.0 - 2.0 * eps)
        lp -= math.log((1.0 - 2.0 * eps) / (c - kap_l))
        lp -= math.log((1.0 - 2.0 * eps) / (kap_r - c))
        lp += _normal_logpdf(state[13], sd_l) + _normal_logpdf(state[14], sd_l)
        lp += _normal_logpdf(state[17], sd_r) + _normal_logpdf(state[18], sd_r)
        return lp
    if okind == OK_BOUND:
        blo, bhi = ppack[P_BLO], ppack[P_BHI]
        if not (blo <= state[11] <= bhi and blo <= state[15] <= bhi):
            return -np.inf
        lp -= 2.0 * math.log(bhi - blo)
    else:
        lp += _normal_logpdf(state[11], 100.0) + _normal_logpdf(state[15], 100.0)
    lp += _normal_logpdf(state[12], 100.0) + _normal_logpdf(state[16], 100.0)
    lp += _normal_logpdf(state[13], sd_l) + _normal_logpdf(state[14], sd_l)
    lp += _normal_logpdf(state[17], sd_r) + _normal_logpdf(state[18], sd_r)
    gamma_const = 0.01 * math.log(0.01) - math.lgamma(0.01)
    for side in range(2):
        rho1 = state[19 + 2 * side]
        rho2 = state[20 + 2 * side]
        if rho1 <= 0.0 or not (0.0 < rho2 <= rho1):
            return -np.inf
        lp += gamma_const + (0.01 - 1.0) * math.log(rho1) - 0.01 * rho1
        lp -= math.log(rho1)
    return lp


@njit(cache=True, nogil=True)
def _lp_state(state, ppack, c_points, c_logw, joint):
    lp = _lp_treat_part(state, ppack, c_points, c_logw)
    if lp == -np.inf:
        return -np.inf
    lj = _lp_jump(state, ppack, joint)
    if lj == -np.inf:
        return -np.inf
    lp += lj
    if joint:
        lo = _lp_out_part(state, ppack)
        if lo == -np.inf:
            return -np.inf
        lp += lo
    return lp


@njit(cache=True, nogil=True)
def _lp_cut_stage2(state, ppack):
    # outcome-parameter target given plugged (c, j): outcome prior plus the
    # jump coupling term, the only treatment factor involving the intercepts
    lj = _lp_jump(state, ppack, True)
    if lj == -np.inf:
        return -np.inf
    lo = _lp_out_part(state, ppack)
    if lo == -np.inf:
        return -np.inf
    return lj + lo


@njit(cache=True, nogil=True)
def _ll_treatment(state, x, t):
    c, j, kl, kr = state[0], state[1], state[2], state[3]
    a2l, b2l, a1l, a1r, a2r = state[4], state[5], state[6], state[7], state[8]
    b1l = (c - kl) * (a2l - a1l) + b2l
    b1r = (a1l - a1r) * c + b1l + j
    b2r = (c + kr) * (a1r - a2r) + b1r
    xl = c - kl
    xr = c + kr
    ll = 0.0
    for i in range(x.size):
        xi = x[i]
        if xi < xl:
            p = a2l * xi + b2l
        elif xi < c:
            p = a1l * xi + b1l
        elif xi <= xr:
            p = a1r * xi + b1r
        else:
            p = a2r * xi + b2r
        if p < 1e-12:
            p = 1e-12
        elif p > 1.0 - 1e-12:
            p = 1.0 - 1e-12
        if t[i] > 0.5:
            ll += math.log(p)
        else:
            ll += math.log1p(-p)
    return ll


@njit(cache=True, nogil=True)
def _ll_outcome_side(state, x, y, ppack, side):
    """Outcome log likelihood for one side of the cutoff (0 left, 1 right)."""
    okind = int(ppack[P_OKIND])
    s = ppack[P_S]
    c = state[0]
    ll = 0.0
    if okind == OK_BIN:
        if side == 0:
            kap = state[9]
            f0, f1, f2, f3 = state[11], state[12], state[13], state[14]
        else:
            kap = state[10]
            f0, f1, f2, f3 = state[15], state[16], state[17], state[18]
        t0 = math.log(f0 / (1.0 - f0))
        t1 = f1 / (f0 * (1.0 - f0))
        for i in range(x.size):
            xi = x[i]
            if (xi < c) != (side == 0):
                continue
            d = xi - c
            w = _expit(s * (kap - xi)) if side == 0 else _expit(s * (xi - kap))
            lin = f0 + f1 * d
            cub = _expit(t0 + t1 * d + f2 * d * d + f3 * d * d * d)
            f = (1.0 - w) * lin + w * cub
            if f < 1e-12:
                f = 1e-12
            elif f > 1.0 - 1e-12:
                f = 1.0 - 1e-12
            if y[i] > 0.5:
                ll += math.log(f)
            else:
                ll += math.log1p(-f)
        return ll
    if side == 0:
        kap = state[9]
        a0, a1, a2, a3 = state[11], state[12], state[13], state[14]
        rho1, rho2 = state[19], state[20]
    else:
        kap = state[10]
        a0, a1, a2, a3 = state[15], state[16], state[17], state[18]
        rho1, rho2 = state[21], state[22]
    for i in range(x.size):
        xi = x[i]
        if (xi < c) != (side == 0):
            continue
        d = xi - c
        if side == 0:
            w = _expit(s * (kap - xi))
            rho = rho1 if xi >= kap else rho2
        else:
            w = _expit(s * (xi - kap))
            rho = rho1 if xi <= kap else rho2
        f = a0 + a1 * d + w * (a2 * d * d + a3 * d * d * d)
        r = y[i] - f
        ll += 0.5 * math.log(rho) - 0.5 * LOG_2PI - 0.5 * rho * r * r
    return ll


@njit(cache=True, nogil=True)
def _ll_outcome(state, x, y, ppack):
    return (_ll_outcome_side(state, x, y, ppack, 0)
            + _ll_outcome_side(state, x, y, ppack, 1))


@njit(cache=True, nogil=True)
def _propose_discrete_c(gen, cidx, c_points, c_weights, c_cumw):
    """Mixture proposal on the cutoff grid: 90% +/-1 steps, 10% prior draws.

    Returns (new_idx, log q(back) - log q(forward)); new_idx < 0 flags a step
    off the grid (auto-reject).
    """
    npts = c_points.size
    if gen.random() < 0.1:
        u = gen.random()
        new_idx = 0
        while new_idx < npts - 1 and c_cumw[new_idx] < u:
            new_idx += 1
    else:
        new_idx = cidx + 1 if gen.random() < 0.5 else cidx - 1
        if new_idx < 0 or new_idx >= npts:
            return -1, 0.0
    step = 0.45 if abs(new_idx - cidx) == 1 else 0.0
    qf = 0.1 * c_weights[new_idx] + step
    qb = 0.1 * c_weights[cidx] + step
    return new_idx, math.log(qb) - math.log(qf)


@njit(cache=True, nogil=True)
def _chol_small(a, n, out):
    """Lower-triangular Cholesky of a[:n,:n] into out; False if not PD."""
    for i in range(n):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, n):
            out[i, j] = 0.0
    return True


@njit(cache=True, nogil=True)
def _refresh_chol(covs, chols, b, size, n_upd):
    """Replace block b's proposal Cholesky with the learned covariance factor."""
    tmp = np.empty((5, 5))
    maxdiag = 0.0
    for i in range(size):
        d = covs[b, i, i] / (n_upd - 1.0)
        if d > maxdiag:
            maxdiag = d
    if maxdiag <= 0.0:
        return
    jitter = 1e-12 + 1e-8 * maxdiag
    for i in range(size):
        for jj in range(size):
            tmp[i, jj] = covs[b, i, jj] / (n_upd - 1.0)
        tmp[i, i] += jitter
    fac = np.empty((5, 5))
    if _chol_small(tmp, size, fac):
        for i in range(size):
            for jj in range(size):
                chols[b, i, jj] = fac[i, jj]


@njit(cache=True, nogil=True)
def _update_moments(state, means, covs, b, size, n_upd):
    # Welford update of the block's running mean and scatter matrix
    delta = np.empty(5)
    for i in range(size):
        ci = BLOCK_COORDS[b, i]
        delta[i] = state[ci] - means[b, i]
        means[b, i] += delta[i] / n_upd
    for i in range(size):
        ci = BLOCK_COORDS[b, i]
        d2_i = state[ci] - means[b, i]
        for jj in range(size):
            covs[b, i, jj] += delta[jj] * d2_i


@njit(cache=True, nogil=True)
def run_chain(gen, x, t, y, ppack, c_points, c_logw, c_weights, c_cumw,
              joint, n_blocks, state0, scales0, adapt_n, burn_n, draws_n, c_start_idx):
    """One adaptive Metropolis-within-Gibbs chain; returns retained states.

    Block proposal covariances are learned and scales tuned toward 30%
    acceptance during the adapt+burn phase, then frozen, so the retained draws
    come from a fixed-kernel chain.
    """
    state = state0.copy()
    cand = state0.copy()
    discrete_c = int(ppack[P_CKIND]) == 2
    lp = _lp_state(state, ppack, c_points, c_logw, joint)
    llt = _ll_treatment(state, x, t)
    ll_l = _ll_outcome_side(state, x, y, ppack, 0) if joint else 0.0
    ll_r = _ll_outcome_side(state, x, y, ppack, 1) if joint else 0.0
    draws = np.empty((draws_n, NSTATE))
    acc = np.zeros(N_BLOCKS)
    prop = np.zeros(N_BLOCKS)
    log_s = np.zeros(N_BLOCKS)
    means = np.zeros((N_BLOCKS, 5))
    covs = np.zeros((N_BLOCKS, 5, 5))
    chols = np.zeros((N_BLOCKS, 5, 5))
    for b in range(n_blocks):
        for i in range(BLOCK_SIZES[b]):
            chols[b, i, i] = scales0[BLOCK_COORDS[b, i]]
    z = np.empty(5)
    cidx = c_start_idx
    pre = adapt_n + burn_n
    n_upd = 0
    for it in range(pre + draws_n):
        adapting = it < pre
        sampling = it >= pre
        for b in range(n_blocks):
            size = BLOCK_SIZES[b]
            if b == 0 and discrete_c and c_points.size == 1:
                continue
            for q in range(NSTATE):
                cand[q] = state[q]
            logq = 0.0
            new_idx = cidx
            if b == 0 and discrete_c:
                new_idx, logq = _propose_discrete_c(gen, cidx, c_points, c_weights, c_cumw)
                if new_idx < 0:
                    if sampling:
                        prop[b] += 1
                    continue
                cand[0] = c_points[new_idx]
            else:
                s_b = math.exp(log_s[b])
                for i in range(size):
                    z[i] = gen.standard_normal()
                for i in range(size):
                    step = 0.0
                    for k in range(i + 1):
                        step += chols[b, i, k] * z[k]
                    ci = BLOCK_COORDS[b, i]
                    cand[ci] = state[ci] + s_b * step
            if sampling:
                prop[b] += 1
            alpha = 0.0
            lp_c = _lp_state(cand, ppack, c_points, c_logw, joint)
            if lp_c > -np.inf:
                llt_c = _ll_treatment(cand, x, t) if BLOCK_T[b] == 1 else llt
                ll_l_c = ll_l
                ll_r_c = ll_r
                if joint and BLOCK_L[b] == 1:
                    ll_l_c = _ll_outcome_side(cand, x, y, ppack, 0)
                if joint and BLOCK_R[b] == 1:
                    ll_r_c = _ll_outcome_side(cand, x, y, ppack, 1)
                delta = (lp_c + llt_c + ll_l_c + ll_r_c) - (lp + llt + ll_l + ll_r) + logq
                alpha = 1.0 if delta >= 0.0 else math.exp(delta)
                if gen.random() < alpha:
                    for q in range(NSTATE):
                        state[q] = cand[q]
                    lp, llt, ll_l, ll_r = lp_c, llt_c, ll_l_c, ll_r_c
                    cidx = new_idx
                    if sampling:
                        acc[b] += 1
            if adapting and not (b == 0 and discrete_c):
                gain = (it + 1.0) ** (-0.6)
                log_s[b] += gain * (alpha - 0.3)
                if log_s[b] > 5.0:
                    log_s[b] = 5.0
                elif log_s[b] < -15.0:
                    log_s[b] = -15.0
        if adapting:
            n_upd += 1
            for b in range(n_blocks):
                if b == 0 and discrete_c:
                    continue
                _update_moments(state, means, covs, b, BLOCK_SIZES[b], n_upd)
                if n_upd >= 200 and n_upd % 50 == 0:
                    _refresh_chol(covs, chols, b, BLOCK_SIZES[b], n_upd)
        if sampling:
            for q in range(NSTATE):
                draws[it - pre, q] = state[q]
    return draws, acc, prop, np.exp(log_s)


@njit(cache=True, nogil=True)
def run_cut_stage2(gen, x, y, ppack, c_seq, j_seq, n_blocks, state0, scales0, adapt_n, burn_n):
    """Outcome-parameter sweeps along a plugged sequence of (c, j) draws.

    Warms up at the first plugged value, then advances the cutoff one stage-1
    draw per sweep.  When a plugged cutoff invalidates the current windows they
    are clipped back into range before the sweep (rare for a concentrated
    stage-1 posterior; the sweep re-equilibrates them).
    """
    state = state0.copy()
    cand = state0.copy()
    dx, ln, un = ppack[P_DX], ppack[P_LN], ppack[P_UN]
    n_out = c_seq.size
    draws = np.empty((n_out, NSTATE))
    acc = np.zeros(N_BLOCKS)
    prop = np.zeros(N_BLOCKS)
    log_s = np.zeros(N_BLOCKS)
    means = np.zeros((N_BLOCKS, 5))
    covs = np.zeros((N_BLOCKS, 5, 5))
    chols = np.zeros((N_BLOCKS, 5, 5))
    for b in range(4, n_blocks):
        for i in range(BLOCK_SIZES[b]):
            chols[b, i, i] = scales0[BLOCK_COORDS[b, i]]
    z = np.empty(5)
    pre = adapt_n + burn_n
    n_upd = 0
    state[0] = c_seq[0]
    state[1] = j_seq[0]
    lp = _lp_cut_stage2(state, ppack)
    ll_l = _ll_outcome_side(state, x, y, ppack, 0)
    ll_r = _ll_outcome_side(state, x, y, ppack, 1)
    for it in range(pre + n_out):
        adapting = it < pre
        sampling = it >= pre
        if sampling:
            i = it - pre
            state[0] = c_seq[i]
            state[1] = j_seq[i]
            c = state[0]
            if state[9] > c - dx:
                state[9] = c - dx
            if state[9] < ln:
                state[9] = ln
            if state[10] < c + dx:
                state[10] = c + dx
            if state[10] > un:
                state[10] = un
            lp = _lp_cut_stage2(state, ppack)
            ll_l = _ll_outcome_side(state, x, y, ppack, 0)
            ll_r = _ll_outcome_side(state, x, y, ppack, 1)
        for b in range(4, n_blocks):
            size = BLOCK_SIZES[b]
            for q in range(NSTATE):
                cand[q] = state[q]
            s_b = math.exp(log_s[b])
            for i in range(size):
                z[i] = gen.standard_normal()
            for i in range(size):
                step = 0.0
                for k in range(i + 1):
                    step += chols[b, i, k] * z[k]
                ci = BLOCK_COORDS[b, i]
                cand[ci] = state[ci] + s_b * step
            if sampling:
                prop[b] += 1
            alpha = 0.0
            lp_c = _lp_cut_stage2(cand, ppack)
            if lp_c > -np.inf:
                ll_l_c = _ll_outcome_side(cand, x, y, ppack, 0) if BLOCK_L[b] == 1 else ll_l
                ll_r_c = _ll_outcome_side(cand, x, y, ppack, 1) if BLOCK_R[b] == 1 else ll_r
                delta = (lp_c + ll_l_c + ll_r_c) - (lp + ll_l + ll_r)
                alpha = 1.0 if delta >= 0.0 else math.exp(delta)
                if gen.random() < alpha:
                    for q in range(NSTATE):
                        state[q] = cand[q]
                    lp, ll_l, ll_r = lp_c, ll_l_c, ll_r_c
                    if sampling:
                        acc[b] += 1
            if adapting:
                gain = (it + 1.0) ** (-0.6)
                log_s[b] += gain * (alpha - 0.3)
                if log_s[b] > 5.0:
                    log_s[b] = 5.0
                elif log_s[b] < -15.0:
                    log_s[b] = -15.0
        if adapting:
            n_upd += 1
            for b in range(4, n_blocks):
                _update_moments(state, means, covs, b, BLOCK_SIZES[b], n_upd)
                if n_upd >= 200 and n_upd % 50 == 0:
                    _refresh_chol(covs, chols, b, BLOCK_SIZES[b], n_upd)
        if sampling:
            for q in range(NSTATE):
                draws[it - pre, q] = state[q]
    return draws, acc, prop


@njit(cache=True, nogil=True)
def _ll_two_constant(c, th_l, th_r, xs_sorted, t_prefix):
    # Bernoulli likelihood of constant take-up levels via prefix sums
    n = xs_sorted.size
    n_l = np.searchsorted(xs_sorted, c)
    s_l = t_prefix[n_l]
    s_r = t_prefix[n] - s_l
    n_r = n - n_l
    pl = min(max(th_l, 1e-12), 1.0 - 1e-12)
    pr = min(max(th_r, 1e-12), 1.0 - 1e-12)
    return (s_l * math.log(pl) + (n_l - s_l) * math.log1p(-pl)
            + s_r * math.log(pr) + (n_r - s_r) * math.log1p(-pr))


@njit(cache=True, nogil=True)
def _lp_two_constant(c, th_l, th_r, eta, ppack, c_points, c_logw):
    lp = _log_pdf_cutoff(c, ppack, c_points, c_logw)
    if lp == -np.inf:
        return -np.inf
    if not (0.0 <= th_l <= 1.0 and 0.0 <= th_r <= 1.0 and th_r - th_l >= eta):
        return -np.inf
    return lp


@njit(cache=True, nogil=True)
def run_two_constant(gen, xs_sorted, t_prefix, ppack, c_points, c_logw, c_weights, c_cumw,
                     state0, scales0, adapt_n, burn_n, draws_n, c_start_idx):
    """Changepoint sampler for constant take-up levels either side of c."""
    state = state0.copy()
    eta = ppack[P_ETA]
    discrete_c = int(ppack[P_CKIND]) == 2
    lp = _lp_two_constant(state[0], state[1], state[2], eta, ppack, c_points, c_logw)
    ll = _ll_two_constant(state[0], state[1], state[2], xs_sorted, t_prefix)
    draws = np.empty((draws_n, 3))
    acc = np.zeros(2)
    prop = np.zeros(2)
    log_s = np.zeros(2)
    mean2 = np.zeros(2)
    cov2 = np.zeros((2, 2))
    chol2 = np.zeros((2, 2))
    chol2[0, 0] = scales0[1]
    chol2[1, 1] = scales0[2]
    cidx = c_start_idx
    pre = adapt_n + burn_n
    n_upd = 0
    for it in range(pre + draws_n):
        adapting = it < pre
        sampling = it >= pre
        for b in range(2):
            if b == 0 and discrete_c and c_points.size == 1:
                continue
            c_new, tl_new, tr_new = state[0], state[1], state[2]
            logq = 0.0
            new_idx = cidx
            if b == 0:
                if discrete_c:
                    new_idx, logq = _propose_discrete_c(gen, cidx, c_points, c_weights, c_cumw)
                    if new_idx < 0:
                        if sampling:
                            prop[b] += 1
                        continue
                    c_new = c_points[new_idx]
                else:
                    c_new = state[0] + math.exp(log_s[0]) * scales0[0] * gen.standard_normal()
            else:
                s_b = math.exp(log_s[1])
                z0 = gen.standard_normal()
                z1 = gen.standard_normal()
                tl_new = state[1] + s_b * chol2[0, 0] * z0
                tr_new = state[2] + s_b * (chol2[1, 0] * z0 + chol2[1, 1] * z1)
            if sampling:
                prop[b] += 1
            alpha = 0.0
            lp_c = _lp_two_constant(c_new, tl_new, tr_new, eta, ppack, c_points, c_logw)
            if lp_c > -np.inf:
                ll_c = _ll_two_constant(c_new, tl_new, tr_new, xs_sorted, t_prefix)
                delta = (lp_c + ll_c) - (lp + ll) + logq
                alpha = 1.0 if delta >= 0.0 else math.exp(delta)
                if gen.random() < alpha:
                    state[0], state[1], state[2] = c_new, tl_new, tr_new
                    lp, ll = lp_c, ll_c
                    cidx = new_idx
                    if sampling:
                        acc[b] += 1
            if adapting and not (b == 0 and discrete_c):
                gain = (it + 1.0) ** (-0.6)
                log_s[b] += gain * (alpha - 0.3)
                if log_s[b] > 5.0:
                    log_s[b] = 5.0
                elif log_s[b] < -15.0:
                    log_s[b] = -15.0
        if adapting:
            n_upd += 1
            d0 = state[1] - mean2[0]
            d1 = state[2] - mean2[1]
            mean2[0] += d0 / n_upd
            mean2[1] += d1 / n_upd
            e0 = state[1] - mean2[0]
            e1 = state[2] - mean2[1]
            cov2[0, 0] += d0 * e0
            cov2[0, 1] += d0 * e1
            cov2[1, 0] += d1 * e0
            cov2[1, 1] += d1 * e1
            if n_upd >= 200 and n_upd % 50 == 0:
                maxdiag = max(cov2[0, 0], cov2[1, 1]) / (n_upd - 1.0)
                if maxdiag > 0.0:
                    tmp = np.empty((2, 2))
                    jit = 1e-12 + 1e-8 * maxdiag
                    for i in range(2):
                        for jj in range(2):
                            tmp[i, jj] = cov2[i, jj] / (n_upd - 1.0)
                        tmp[i, i] += jit
                    fac = np.empty((2, 2))
                    if _chol_small(tmp, 2, fac):
                        for i in range(2):
                            for jj in range(2):
                                chol2[i, jj] = fac[i, jj]
        if sampling:
            draws[it - pre, 0] = state[0]
            draws[it - pre, 1] = state[1]
            draws[it - pre, 2] = state[2]
    return draws, acc, prop
