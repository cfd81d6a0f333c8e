"""Compiled PAN policy kernels and the simulation loop."""
import math

import numpy as np

from ._jit import njit
from . import _geometry as g
from .divergences import BERNOULLI, BERNOULLI_CLAMP, GAUSSIAN_UNKNOWN

EST_EB = 0
EST_TS = 1
EST_ORACLE = 2

DET_KKT = 0
DET_TS = 1
DET_PPS = 2

SEL_IDS = 0
SEL_BETA = 1

THR_THEORETICAL = 0
THR_PRACTICAL = 1
THR_HEURISTIC = 2

VAR_FLOOR = 1e-12


@njit
def empirical(fam, N, S, Q, var, means, var_use):
    """Empirical means (clamped for Bernoulli) and the variances the
    algorithm should plug in (MLE estimates for the unknown-variance family)."""
    for k in range(N.shape[0]):
        m = S[k] / N[k]
        if fam == BERNOULLI:
            m = min(max(m, BERNOULLI_CLAMP), 1.0 - BERNOULLI_CLAMP)
        means[k] = m
        if fam == GAUSSIAN_UNKNOWN:
            v = Q[k] / N[k] - m * m
            var_use[k] = v if v > VAR_FLOOR else VAR_FLOOR
        else:
            var_use[k] = var[k]


@njit
def posterior_moments(fam, N, S, var, mean, s2):
    for k in range(N.shape[0]):
        if fam == BERNOULLI:
            a = 1.0 + S[k]
            b = 1.0 + N[k] - S[k]
            mean[k] = a / (a + b)
            s2[k] = a * b / ((a + b) * (a + b) * (a + b + 1.0))
        else:
            mean[k] = S[k] / N[k]
            s2[k] = var[k] / N[k]


@njit
def posterior_draw(fam, N, S, var, rng, out):
    """One independent posterior draw per arm, in arm order."""
    for k in range(N.shape[0]):
        if fam == BERNOULLI:
            x = rng.beta(1.0 + S[k], 1.0 + N[k] - S[k])
            out[k] = min(max(x, BERNOULLI_CLAMP), 1.0 - BERNOULLI_CLAMP)
        else:
            out[k] = S[k] / N[k] + math.sqrt(var[k] / N[k]) * rng.standard_normal()


@njit
def estimate_k(est, fam, N, S, Q, var, theta_true, rng, theta_hat, var_use):
    empirical(fam, N, S, Q, var, theta_hat, var_use)
    if est == EST_TS:
        posterior_draw(fam, N, S, var, rng, theta_hat)
    elif est == EST_ORACLE:
        for k in range(N.shape[0]):
            theta_hat[k] = theta_true[k]


@njit
def detect_kkt_k(fam, theta_hat, var_use, p, pfi, pff, crn, sd, rho):
    return g.glrt_min(fam, theta_hat, var_use, p, pfi, pff, crn, sd, rho)[1]


@njit
def detect_ts_k(fam, N, S, var, pfi, pff, cap, rng):
    """Resample full posterior vectors until one lands in an alternative.

    Returns (pitfall ordinal or -1 when the cap is hit, attempts used). The
    accepted draw is attributed to its most violated pitfall.
    """
    K = N.shape[0]
    draw = np.empty(K)
    for attempt in range(cap):
        posterior_draw(fam, N, S, var, rng, draw)
        best = -np.inf
        best_r = 0
        for r in range(pfi.shape[0]):
            m = g.pitfall_margin(pfi, pff, r, draw)
            if m > best:
                best = m
                best_r = r
        if best > 0.0:
            return best_r, attempt + 1
    return -1, cap


@njit
def pps_weights(fam, N, S, var, pfi, pff, w):
    K = N.shape[0]
    mean = np.empty(K)
    s2 = np.empty(K)
    posterior_moments(fam, N, S, var, mean, s2)
    total = 0.0
    for r in range(pfi.shape[0]):
        w[r] = g.pitfall_prob(pfi, pff, r, mean, s2)
        total += w[r]
    return total


@njit
def detect_pps_k(fam, N, S, var, pfi, pff, rng):
    """Pitfall sampled proportionally to its posterior mass, -1 if all vanish."""
    w = np.empty(pfi.shape[0])
    total = pps_weights(fam, N, S, var, pfi, pff, w)
    if not (total > 0.0 and math.isfinite(total)):
        return -1
    u = rng.random() * total
    acc = 0.0
    for r in range(w.shape[0]):
        acc += w[r]
        if u < acc:
            return r
    last = 0
    for r in range(w.shape[0]):
        if w[r] > 0.0:
            last = r
    return last


@njit
def sample_index(h, rng):
    u = rng.random()
    acc = 0.0
    last = 0
    for k in range(h.shape[0]):
        if h[k] > 0.0:
            last = k
            acc += h[k]
            if u < acc:
                return k
    return last


@njit
def select_beta_k(leader, challenger, beta, rng):
    return leader if rng.random() < beta else challenger


@njit
def pan_step_k(fam, N, S, Q, var, sd, crn, rho, theta_true,
               q, qk, qT, qeps, ccls, ci, cj, ncls,
               est, det, sel, beta, cap, rng, theta_hat, h):
    """One estimate-detect-select step.

    Returns (arm, pitfall kind, pitfall a, pitfall b, fallback flag). The
    estimate and the selection weights are left in ``theta_hat`` and ``h``.
    """
    K = N.shape[0]
    t = 0.0
    for k in range(K):
        t += N[k]
    p = N / t
    var_use = np.empty(K)
    estimate_k(est, fam, N, S, Q, var, theta_true, rng, theta_hat, var_use)
    pfi, pff = g.build_pitfalls(q, qk, qT, qeps, ccls, ci, cj, ncls, theta_hat)
    fallback = 0
    if det == DET_TS:
        r, _ = detect_ts_k(fam, N, S, var, pfi, pff, cap, rng)
    elif det == DET_PPS:
        r = detect_pps_k(fam, N, S, var, pfi, pff, rng)
    else:
        r = detect_kkt_k(fam, theta_hat, var_use, p, pfi, pff, crn, sd, rho)
    if r < 0:
        fallback = 1
        r = detect_kkt_k(fam, theta_hat, var_use, p, pfi, pff, crn, sd, rho)
    if sel == SEL_BETA:
        a = pfi[r, 1]
        b = pfi[r, 2]
        leader = pfi[r, 4]
        arm = select_beta_k(leader, b if leader == a else a, beta, rng)
        for k in range(K):
            h[k] = 0.0
        h[leader] = beta
        h[b if leader == a else a] = 1.0 - beta
    else:
        grad = np.empty(K)
        vt = np.empty(K)
        value = g.pitfall_detail(fam, theta_hat, var_use, p, pfi, pff, r, crn, sd, rho, grad, vt)
        g.ids_weights(fam, theta_hat, var_use, p, pfi, pff, r, value, grad, h)
        arm = sample_index(h, rng)
    return arm, pfi[r, 0], pfi[r, 1], pfi[r, 2], fallback


@njit
def draw_reward(fam, theta, sd, crn, rho, arm, rng):
    if fam == BERNOULLI:
        return 1.0 if rng.random() < theta[arm] else 0.0
    if crn:
        z0 = rng.standard_normal()
        zi = rng.standard_normal()
        return theta[arm] + sd[arm] * (math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * zi)
    return theta[arm] + sd[arm] * rng.standard_normal()


@njit
def threshold_k(kind, t, N, delta, const):
    if kind == THR_THEORETICAL:
        acc = 0.0
        for k in range(N.shape[0]):
            acc += math.log(1.0 + math.log(N[k]))
        return 3.0 * acc + const
    if kind == THR_PRACTICAL:
        return math.log((1.0 + math.log(t)) / delta)
    return const


@njit
def run_kernel(fam, theta_true, var_true, var_alg, crn, rho,
               q, qk, qT, qeps, ccls, ci, cj, ncls,
               uniform, est, det, sel, beta, cap, n0, horizon,
               stop_on, thr_kind, thr_const, delta, checkpoints, log_on, rng):
    """Play one replication.

    Returns (t, stopped, N, S, Q, fallbacks, trajectory, log_arm, log_pf,
    log_glrt, log_est). Trajectory rows are (t, gamma_true, gamma_emp, p_1..p_K).
    """
    K = theta_true.shape[0]
    sd_true = np.sqrt(var_true)
    sd_alg = np.sqrt(var_alg)
    fam_true = fam
    N = np.zeros(K)
    S = np.zeros(K)
    Q = np.zeros(K)
    t = 0
    for _ in range(n0):
        for k in range(K):
            y = draw_reward(fam, theta_true, sd_true, crn, rho, k, rng)
            N[k] += 1.0
            S[k] += y
            Q[k] += y * y
            t += 1
    nlog = horizon if log_on else 0
    log_arm = np.full(nlog, -1, dtype=np.int64)
    log_pf = np.full((nlog, 3), -1, dtype=np.int64)
    log_glrt = np.full(nlog, np.nan)
    log_est = np.full((nlog, K), np.nan)
    ncp = checkpoints.shape[0]
    traj = np.full((ncp, 3 + K), np.nan)
    ncp_done = 0
    pfi_true, pff_true = g.build_pitfalls(q, qk, qT, qeps, ccls, ci, cj, ncls, theta_true)
    means = np.empty(K)
    var_use = np.empty(K)
    theta_hat = np.empty(K)
    h = np.empty(K)
    fallbacks = 0
    stopped = False
    cpi = 0
    while True:
        need_glrt = stop_on or log_on
        while cpi < ncp and checkpoints[cpi] < t:
            cpi += 1
        at_cp = cpi < ncp and checkpoints[cpi] == t
        glrt = np.nan
        if need_glrt or at_cp:
            empirical(fam, N, S, Q, var_alg, means, var_use)
            pfi, pff = g.build_pitfalls(q, qk, qT, qeps, ccls, ci, cj, ncls, means)
            glrt = g.glrt_min(fam, means, var_use, N, pfi, pff, crn, sd_alg, rho)[0]
        if at_cp:
            p = N / t
            traj[ncp_done, 0] = t
            traj[ncp_done, 1] = g.glrt_min(fam_true, theta_true, var_true, p, pfi_true, pff_true,
                                           crn, sd_true, rho)[0]
            traj[ncp_done, 2] = glrt / t
            for k in range(K):
                traj[ncp_done, 3 + k] = p[k]
            ncp_done += 1
            cpi += 1
        if stop_on and glrt > threshold_k(thr_kind, t, N, delta, thr_const):
            stopped = True
            break
        if t >= horizon:
            break
        if uniform:
            arm = t % K
            pk = -1
            pa = -1
            pb = -1
        else:
            arm, pk, pa, pb, fb = pan_step_k(fam, N, S, Q, var_alg, sd_alg, crn, rho, theta_true,
                                             q, qk, qT, qeps, ccls, ci, cj, ncls,
                                             est, det, sel, beta, cap, rng, theta_hat, h)
            fallbacks += fb
        if log_on:
            log_arm[t] = arm
            log_pf[t, 0] = pk
            log_pf[t, 1] = pa
            log_pf[t, 2] = pb
            log_glrt[t] = glrt
            if not uniform:
                for k in range(K):
                    log_est[t, k] = theta_hat[k]
        y = draw_reward(fam, theta_true, sd_true, crn, rho, arm, rng)
        N[arm] += 1.0
        S[arm] += y
        Q[arm] += y * y
        t += 1
    return (t, stopped, N, S, Q, fallbacks, traj[:ncp_done], log_arm[:t], log_pf[:t],
            log_glrt[:t], log_est[:t])
