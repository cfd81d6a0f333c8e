"""Compiled kernels for pitfall tables and generalized Chernoff information.

A pitfall table has two arrays with one row per pitfall:

``pfi`` (int64, PF_INT_COLS columns)
    kind, arm a, arm b, abs flag, leader arm
``pff`` (float64, PF_FLT_COLS columns)
    off_a, off_b, sg_a, sg_b, threshold T, direction sdir

Pair pitfalls are parametrised in a reflected coordinate: arm k of the pair sits
at ``z_k = sg_k * (theta_k - off_k)`` and the alternative at ``off_k + sg_k * u``
for a common scalar ``u``. The answer holds while ``z_a > z_b``; the pitfall
alternative is ``z_b > z_a``.
"""
import math

import numpy as np

from ._jit import njit
from .divergences import BERNOULLI, BERNOULLI_CLAMP, GAUSSIAN, GAUSSIAN_UNKNOWN, dkl_dm2, kl_scalar

PF_PAIR = 0
PF_ARM = 1
PF_WHOLE = 2

Q_BEST_ARM = 0
Q_BEST_K = 1
Q_THRESHOLD = 2
Q_CLOSEST = 3
Q_ALL_EPS = 4
Q_EPS_BEST = 5
Q_SIGNED = 6
Q_MURPHY = 7
Q_PAIRWISE = 8

PF_INT_COLS = 5
PF_FLT_COLS = 6

BISECT_TOL = 1e-10
BISECT_MAX_ITER = 200

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(48)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)


@njit
def norm_cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit
def argmax_first(x):
    best = 0
    for i in range(1, x.shape[0]):
        if x[i] > x[best]:
            best = i
    return best


@njit
def argmin_first(x):
    best = 0
    for i in range(1, x.shape[0]):
        if x[i] < x[best]:
            best = i
    return best


@njit
def top_k_mask(theta, k):
    """Membership mask of the k largest means (ties toward lower index)."""
    order = np.argsort(-theta, kind="mergesort")
    mask = np.zeros(theta.shape[0], dtype=np.bool_)
    for r in range(k):
        mask[order[r]] = True
    return mask


@njit
def pairwise_class(theta, ccls, ci, cj, ncls):
    """Class whose constraints theta satisfies; with ties, the class with most
    satisfied (non-strict) constraints, lowest id first."""
    strict_ok = np.ones(ncls, dtype=np.bool_)
    score = np.zeros(ncls, dtype=np.int64)
    for r in range(ccls.shape[0]):
        c = ccls[r]
        if not theta[ci[r]] > theta[cj[r]]:
            strict_ok[c] = False
        if theta[ci[r]] >= theta[cj[r]]:
            score[c] += 1
    for c in range(ncls):
        if strict_ok[c]:
            return c
    best = 0
    for c in range(1, ncls):
        if score[c] > score[best]:
            best = c
    return best


@njit
def _new_table(n):
    return np.zeros((n, PF_INT_COLS), dtype=np.int64), np.zeros((n, PF_FLT_COLS))


@njit
def _set_pair(pfi, pff, r, a, b, off_a, off_b, sg_a, sg_b, absflag, lead):
    pfi[r, 0] = PF_PAIR
    pfi[r, 1] = a
    pfi[r, 2] = b
    pfi[r, 3] = absflag
    pfi[r, 4] = lead
    pff[r, 0] = off_a
    pff[r, 1] = off_b
    pff[r, 2] = sg_a
    pff[r, 3] = sg_b


@njit
def build_pitfalls(q, qk, qT, qeps, ccls, ci, cj, ncls, theta):
    """Pitfall table of the query at mean vector theta (lenient on ties)."""
    K = theta.shape[0]
    if q == Q_BEST_ARM or q == Q_EPS_BEST:
        best = argmax_first(theta)
        off = -qeps if q == Q_EPS_BEST else 0.0
        pfi, pff = _new_table(K - 1)
        r = 0
        for j in range(K):
            if j != best:
                _set_pair(pfi, pff, r, best, j, off, 0.0, 1.0, 1.0, 0, best)
                r += 1
        return pfi, pff
    if q == Q_BEST_K:
        mask = top_k_mask(theta, qk)
        pfi, pff = _new_table(qk * (K - qk))
        r = 0
        for i in range(K):
            if mask[i]:
                for j in range(K):
                    if not mask[j]:
                        _set_pair(pfi, pff, r, i, j, 0.0, 0.0, 1.0, 1.0, 0, i)
                        r += 1
        return pfi, pff
    if q == Q_THRESHOLD:
        pfi, pff = _new_table(K)
        for i in range(K):
            pfi[i, 0] = PF_ARM
            pfi[i, 1] = i
            pfi[i, 2] = i
            pfi[i, 4] = i
            pff[i, 2] = 1.0 if theta[i] > qT else -1.0
            pff[i, 4] = qT
        return pfi, pff
    if q == Q_CLOSEST:
        best = argmin_first(np.abs(theta - qT))
        sb = 1.0 if theta[best] >= qT else -1.0
        pfi, pff = _new_table(K - 1)
        r = 0
        for j in range(K):
            if j != best:
                sj = 1.0 if theta[j] >= qT else -1.0
                _set_pair(pfi, pff, r, j, best, qT, qT, sj, sb, 1, best)
                r += 1
        return pfi, pff
    if q == Q_ALL_EPS:
        top = theta.max()
        ngood = 0
        for i in range(K):
            if theta[i] >= top - qeps:
                ngood += 1
        pfi, pff = _new_table(ngood * (K - 1))
        r = 0
        for i in range(K):
            if theta[i] >= top - qeps:
                for j in range(K):
                    if j != i:
                        _set_pair(pfi, pff, r, i, j, -qeps, 0.0, 1.0, 1.0, 0, i)
                        r += 1
        return pfi, pff
    if q == Q_PAIRWISE:
        c = pairwise_class(theta, ccls, ci, cj, ncls)
        n = 0
        for r in range(ccls.shape[0]):
            if ccls[r] == c:
                n += 1
        pfi, pff = _new_table(n)
        s = 0
        for r in range(ccls.shape[0]):
            if ccls[r] == c:
                _set_pair(pfi, pff, s, ci[r], cj[r], 0.0, 0.0, 1.0, 1.0, 0, ci[r])
                s += 1
        return pfi, pff
    # Signed and Murphy
    lo = theta.min()
    if q == Q_MURPHY and not lo < qT:
        pfi, pff = _new_table(K)
        for i in range(K):
            pfi[i, 0] = PF_ARM
            pfi[i, 1] = i
            pfi[i, 2] = i
            pfi[i, 4] = i
            pff[i, 2] = 1.0
            pff[i, 4] = qT
        return pfi, pff
    pfi, pff = _new_table(1)
    pfi[0, 0] = PF_WHOLE
    pfi[0, 1] = -1
    pfi[0, 2] = -1
    pfi[0, 4] = -1
    pff[0, 4] = qT
    if q == Q_MURPHY:
        pff[0, 5] = 1.0
    else:
        pff[0, 5] = -1.0 if signed_is_plus(theta, qT) else 1.0
    return pfi, pff


@njit
def signed_is_plus(theta, T):
    """Sign answer; a mixed vector goes to the side with more KL mass."""
    up = 0.0
    down = 0.0
    for i in range(theta.shape[0]):
        diff = theta[i] - T
        if diff > 0:
            up += diff * diff
        elif diff < 0:
            down += diff * diff
    return up >= down


# ---------------------------------------------------------------------------
# pair minimisation


@njit
def _bern_u_bounds(off, sg):
    if sg > 0:
        return BERNOULLI_CLAMP - off, 1.0 - BERNOULLI_CLAMP - off
    return off - (1.0 - BERNOULLI_CLAMP), off - BERNOULLI_CLAMP


@njit
def _pair_slope(fam, u, pa, pb, tha, thb, za, zb, va, vb, offa, offb, sga, sgb):
    if fam == GAUSSIAN_UNKNOWN:
        da = u - za
        db = u - zb
        return pa * da / (va + da * da) + pb * db / (vb + db * db)
    return (pa * sga * dkl_dm2(fam, tha, offa + sga * u, va)
            + pb * sgb * dkl_dm2(fam, thb, offb + sgb * u, vb))


@njit
def _pair_cost(fam, th, z, u, v, off, sg):
    if fam == GAUSSIAN_UNKNOWN:
        d = z - u
        return 0.5 * math.log1p(d * d / v)
    return kl_scalar(fam, th, off + sg * u, v)


@njit
def pair_solve(fam, pa, pb, tha, thb, va, vb, offa, offb, sga, sgb):
    """Minimise the pair objective; returns (u, value, grad_a, grad_b)."""
    za = sga * (tha - offa)
    zb = sgb * (thb - offb)
    if not za > zb:
        return za, 0.0, 0.0, 0.0
    if fam == BERNOULLI or fam == GAUSSIAN_UNKNOWN:
        lo = zb
        hi = za
        if fam == BERNOULLI:
            l1, h1 = _bern_u_bounds(offa, sga)
            l2, h2 = _bern_u_bounds(offb, sgb)
            lo = max(lo, max(l1, l2))
            hi = min(hi, min(h1, h2))
            if hi < lo:
                hi = lo
        if pa == 0.0 and pb == 0.0:
            u = 0.5 * (lo + hi)
        elif pa == 0.0:
            u = lo
        elif pb == 0.0:
            u = hi
        else:
            for _ in range(BISECT_MAX_ITER):
                if hi - lo <= BISECT_TOL:
                    break
                mid = 0.5 * (lo + hi)
                if _pair_slope(fam, mid, pa, pb, tha, thb, za, zb, va, vb,
                               offa, offb, sga, sgb) > 0.0:
                    hi = mid
                else:
                    lo = mid
            u = 0.5 * (lo + hi)
        ga = _pair_cost(fam, tha, za, u, va, offa, sga)
        gb = _pair_cost(fam, thb, zb, u, vb, offb, sgb)
        return u, pa * ga + pb * gb, ga, gb
    # Gaussian: precision-weighted mean, closed form
    wa = pa / va
    wb = pb / vb
    if wa + wb == 0.0:
        u = 0.5 * (za + zb)
        value = 0.0
    else:
        u = (wa * za + wb * zb) / (wa + wb)
        gap = za - zb
        value = 0.5 * wa * wb * gap * gap / (wa + wb)
    ga = (za - u) * (za - u) / (2.0 * va)
    gb = (zb - u) * (zb - u) / (2.0 * vb)
    return u, value, ga, gb


@njit
def crn_solve(pa, pb, tha, thb, sa, sb, rho):
    """Correlated Gaussian pair; returns (value, grad_a, grad_b, shift_a, shift_b)."""
    gap = tha - thb
    if not gap > 0.0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    if pa == 0.0 or pb == 0.0:
        ga = gap * gap / (2.0 * sa * sa) if pa == 0.0 and pb > 0.0 else 0.0
        gb = gap * gap / (2.0 * sb * sb) if pb == 0.0 and pa > 0.0 else 0.0
        return 0.0, ga, gb, 0.0, 0.0
    cross = rho * sa * sb / math.sqrt(pa * pb)
    caa = sa * sa / pa
    cbb = sb * sb / pb
    den = caa + cbb - 2.0 * cross
    value = gap * gap / (2.0 * den)
    scale = gap * gap / (2.0 * den * den)
    ga = scale * (caa / pa - cross / pa)
    gb = scale * (cbb / pb - cross / pb)
    lam = gap / den
    return value, ga, gb, -lam * (caa - cross), lam * (cbb - cross)


# ---------------------------------------------------------------------------
# single pitfall evaluation


@njit
def pitfall_value(fam, theta, var, p, pfi, pff, r, crn, sd, rho):
    kind = pfi[r, 0]
    if kind == PF_PAIR:
        a = pfi[r, 1]
        b = pfi[r, 2]
        if crn:
            return crn_solve(p[a], p[b], theta[a], theta[b], sd[a], sd[b], rho)[0]
        return pair_solve(fam, p[a], p[b], theta[a], theta[b], var[a], var[b],
                          pff[r, 0], pff[r, 1], pff[r, 2], pff[r, 3])[1]
    T = pff[r, 4]
    if kind == PF_ARM:
        a = pfi[r, 1]
        return p[a] * _arm_cost(fam, theta[a], T, var[a], pff[r, 2])
    sdir = pff[r, 5]
    total = 0.0
    for k in range(theta.shape[0]):
        if sdir * (theta[k] - T) < 0.0:
            total += p[k] * kl_scalar(fam, theta[k], T, var[k])
    return total


@njit
def _arm_cost(fam, th, T, v, sg):
    if sg * (th - T) <= 0.0:
        return 0.0
    return kl_scalar(fam, th, T, v)


@njit
def pitfall_detail(fam, theta, var, p, pfi, pff, r, crn, sd, rho, grad, vt):
    """Value of pitfall r; writes the gradient and the minimiser in place."""
    K = theta.shape[0]
    for k in range(K):
        grad[k] = 0.0
        vt[k] = theta[k]
    kind = pfi[r, 0]
    if kind == PF_PAIR:
        a = pfi[r, 1]
        b = pfi[r, 2]
        if crn:
            value, ga, gb, sha, shb = crn_solve(p[a], p[b], theta[a], theta[b], sd[a], sd[b], rho)
            grad[a] = ga
            grad[b] = gb
            vt[a] = theta[a] + sha
            vt[b] = theta[b] + shb
            return value
        u, value, ga, gb = pair_solve(fam, p[a], p[b], theta[a], theta[b], var[a], var[b],
                                      pff[r, 0], pff[r, 1], pff[r, 2], pff[r, 3])
        grad[a] = ga
        grad[b] = gb
        vt[a] = pff[r, 0] + pff[r, 2] * u
        vt[b] = pff[r, 1] + pff[r, 3] * u
        return value
    T = pff[r, 4]
    if kind == PF_ARM:
        a = pfi[r, 1]
        g = _arm_cost(fam, theta[a], T, var[a], pff[r, 2])
        grad[a] = g
        if g > 0.0:
            vt[a] = T
        return p[a] * g
    sdir = pff[r, 5]
    total = 0.0
    for k in range(K):
        if sdir * (theta[k] - T) < 0.0:
            g = kl_scalar(fam, theta[k], T, var[k])
            grad[k] = g
            vt[k] = T
            total += p[k] * g
    return total


@njit
def _local_var(fam, th, v):
    if fam == BERNOULLI:
        return th * (1.0 - th)
    return v


@njit
def ids_weights(fam, theta, var, p, pfi, pff, r, value, grad, h):
    """Selection weights h for pitfall r, including the degenerate fallbacks."""
    K = theta.shape[0]
    if value > 0.0:
        total = 0.0
        for k in range(K):
            w = p[k] * grad[k]
            if w < 0.0:
                w = 0.0
            h[k] = w
            total += w
        if total > 0.0:
            for k in range(K):
                h[k] /= total
            return
    for k in range(K):
        h[k] = 0.0
    kind = pfi[r, 0]
    # relevant arms of the pitfall
    rel = np.zeros(K, dtype=np.bool_)
    if kind == PF_PAIR:
        rel[pfi[r, 1]] = True
        rel[pfi[r, 2]] = True
    elif kind == PF_ARM:
        rel[pfi[r, 1]] = True
    else:
        for k in range(K):
            if pff[r, 5] * (theta[k] - pff[r, 4]) < 0.0:
                rel[k] = True
    nrel = 0
    nzero = 0
    for k in range(K):
        if rel[k]:
            nrel += 1
            if p[k] == 0.0:
                nzero += 1
    if nrel == 0 or nzero == nrel:
        for k in range(K):
            h[k] = 1.0 / K
        return
    if nzero > 0:
        for k in range(K):
            if rel[k] and p[k] == 0.0:
                h[k] = 1.0 / nzero
        return
    # tied means with positive allocation: local quadratic limit
    if kind == PF_PAIR:
        a = pfi[r, 1]
        b = pfi[r, 2]
        ra = max(_local_var(fam, theta[a], var[a]), 1e-300) / p[a]
        rb = max(_local_var(fam, theta[b], var[b]), 1e-300) / p[b]
        h[a] = ra / (ra + rb)
        h[b] = rb / (ra + rb)
        return
    for k in range(K):
        if rel[k]:
            h[k] = 1.0 / nrel


@njit
def glrt_min(fam, theta, var, p, pfi, pff, crn, sd, rho):
    """Minimum pitfall value and its ordinal (ties to the lowest)."""
    best = 0
    best_val = np.inf
    for r in range(pfi.shape[0]):
        v = pitfall_value(fam, theta, var, p, pfi, pff, r, crn, sd, rho)
        if v < best_val:
            best_val = v
            best = r
    return best_val, best


# ---------------------------------------------------------------------------
# posterior membership


@njit
def pitfall_margin(pfi, pff, r, x):
    """Positive iff the mean vector x lies in the alternative of pitfall r."""
    kind = pfi[r, 0]
    if kind == PF_PAIR:
        a = pfi[r, 1]
        b = pfi[r, 2]
        if pfi[r, 3] == 1:
            za = abs(x[a] - pff[r, 0])
            zb = abs(x[b] - pff[r, 1])
        else:
            za = pff[r, 2] * (x[a] - pff[r, 0])
            zb = pff[r, 3] * (x[b] - pff[r, 1])
        return zb - za
    T = pff[r, 4]
    if kind == PF_ARM:
        return -pff[r, 2] * (x[pfi[r, 1]] - T)
    sdir = pff[r, 5]
    m = np.inf
    for k in range(x.shape[0]):
        v = sdir * (x[k] - T)
        if v < m:
            m = v
    return m


@njit
def pitfall_prob(pfi, pff, r, mean, s2):
    """Posterior mass of the alternative of pitfall r under independent
    normal marginals."""
    kind = pfi[r, 0]
    if kind == PF_PAIR:
        a = pfi[r, 1]
        b = pfi[r, 2]
        if pfi[r, 3] == 1:
            # P(|X_b - T| > |X_a - T|): the challenger a gets closer to T
            T = pff[r, 0]
            sa = math.sqrt(s2[a])
            sb = math.sqrt(s2[b])
            c = mean[b] - T
            total = 0.0
            for n in range(_GH_NODES.shape[0]):
                rad = abs(mean[a] + _SQRT2 * sa * _GH_NODES[n] - T)
                inside = norm_cdf((rad - c) / sb) - norm_cdf((-rad - c) / sb)
                total += _GH_WEIGHTS[n] * inside
            return max(0.0, 1.0 - total)
        mua = pff[r, 2] * (mean[a] - pff[r, 0])
        mub = pff[r, 3] * (mean[b] - pff[r, 1])
        return norm_cdf((mub - mua) / math.sqrt(s2[a] + s2[b]))
    T = pff[r, 4]
    if kind == PF_ARM:
        a = pfi[r, 1]
        return norm_cdf(-pff[r, 2] * (mean[a] - T) / math.sqrt(s2[a]))
    sdir = pff[r, 5]
    prob = 1.0
    for k in range(mean.shape[0]):
        prob *= norm_cdf(sdir * (mean[k] - T) / math.sqrt(s2[k]))
    return prob


@njit
def all_details(fam, theta, var, p, pfi, pff, crn, sd, rho, vals, G, H):
    """Values, gradients (rows of G) and selection weights (rows of H) of
    every pitfall in the table."""
    K = theta.shape[0]
    vt = np.empty(K)
    grad = np.empty(K)
    h = np.empty(K)
    for r in range(pfi.shape[0]):
        v = pitfall_detail(fam, theta, var, p, pfi, pff, r, crn, sd, rho, grad, vt)
        vals[r] = v
        ids_weights(fam, theta, var, p, pfi, pff, r, v, grad, h)
        for k in range(K):
            G[r, k] = grad[k]
            H[r, k] = h[k]
