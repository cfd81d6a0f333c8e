"""Optimal allocation: maximise the smallest Chernoff information over the
simplex, and certify the result through its KKT dual weights."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from . import _geometry as g
from .chernoff import Pitfall, Query, _tag, correct_answer, pitfall_table, prepare_means
from .divergences import DomainError, FamilyKind, RewardFamily

SLACK_TOL = 1e-7
CERT_TOL = 1e-6
SUBGRAD_STEP = 0.5
SUBGRAD_ITERS = 2_000


class SolverError(RuntimeError):
    """The solver could not certify its best iterate."""

    def __init__(self, message, best=None, certificate=None):
        super().__init__(message)
        self.best = best
        self.certificate = certificate


@dataclass(frozen=True)
class Allocation:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("allocation must be a nonnegative vector summing to 1")
        object.__setattr__(self, "weights", w)

    def __iter__(self):
        return iter(self.weights)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class DualCertificate:
    mu: np.ndarray
    gamma: float
    stationarity_residual: float
    slackness_residual: float
    mu_sum_error: float
    pitfalls: list = field(default_factory=list)
    singular: bool = False

    @property
    def max_residual(self) -> float:
        return max(self.stationarity_residual, self.slackness_residual, self.mu_sum_error)


class _Problem:
    """Pitfall table at the true means plus vectorised evaluation."""

    def __init__(self, query: Query, theta, family: RewardFamily | None):
        family = family or RewardFamily.gaussian((1.0,))
        if family.kind is FamilyKind.GAUSSIAN_UNKNOWN_VARIANCE:
            raise DomainError("allocation solving needs a known-variance family")
        self.query = query
        self.family = family
        self.theta = prepare_means(family, theta)
        correct_answer(query, self.theta)
        self.K = self.theta.size
        self.var = family.variance_array(self.K)
        self.sd = np.sqrt(self.var)
        self.pfi, self.pff = pitfall_table(query, self.theta)
        self.m = self.pfi.shape[0]

    def details(self, p):
        vals = np.empty(self.m)
        G = np.empty((self.m, self.K))
        H = np.empty((self.m, self.K))
        g.all_details(self.family.code, self.theta, self.var, np.asarray(p, dtype=float),
                      self.pfi, self.pff, False, self.sd, 0.0, vals, G, H)
        return vals, G, H

    def values(self, p):
        return self.details(p)[0]

    def tags(self):
        return [_tag(self.query, row) for row in self.pfi]


def project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _subgradient(prob, p0, iters):
    p = p0.copy()
    best_p, best_v = p.copy(), prob.values(p).min()
    for it in range(1, iters + 1):
        vals, G, _ = prob.details(p)
        r = int(np.argmin(vals))
        if vals[r] > best_v:
            best_v, best_p = vals[r], p.copy()
        grad = G[r]
        norm = np.linalg.norm(grad)
        if norm == 0.0:
            break
        p = project_simplex(p + SUBGRAD_STEP / math.sqrt(it) * grad / norm)
    return best_p, best_v


def _slsqp(prob, p0, scale):
    K = prob.K

    def obj(x):
        return -x[K]

    def obj_jac(x):
        out = np.zeros(K + 1)
        out[K] = -1.0
        return out

    def cons(x):
        return prob.values(x[:K]) / scale - x[K]

    def cons_jac(x):
        _, G, _ = prob.details(x[:K])
        return np.hstack([G / scale, -np.ones((prob.m, 1))])

    x0 = np.append(p0, prob.values(p0).min() / scale)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = _run_slsqp(obj, x0, obj_jac, cons, cons_jac, K)
    p = np.clip(res.x[:K], 0.0, None)
    return p / p.sum()


def _run_slsqp(obj, x0, obj_jac, cons, cons_jac, K):
    return minimize(obj, x0, jac=obj_jac, method="SLSQP",
                    bounds=[(1e-12, 1.0)] * K + [(None, None)],
                    constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac},
                                 {"type": "eq", "fun": lambda x: x[:K].sum() - 1.0,
                                  "jac": lambda x: np.append(np.ones(K), 0.0)}],
                    options={"ftol": 1e-15, "maxiter": 500})


def _kkt_residual(prob, p, mu, gamma, active):
    vals, G, _ = prob.details(p)
    r1 = mu @ G[active] - gamma
    r2 = vals[active] - gamma
    return np.concatenate([r1, r2, [mu.sum() - 1.0, p.sum() - 1.0]])


def _newton_polish(prob, p, iters=30):
    """Gauss-Newton on the active-set KKT system (finite-difference Jacobian)."""
    vals, G, H = prob.details(p)
    gamma = vals.min()
    active = np.flatnonzero(vals <= gamma * (1.0 + 1e-6) + 1e-15)
    mu, _ = nnls(H[active].T, p)
    x = np.concatenate([p, mu, [gamma]])
    K, m = prob.K, active.size

    def resid(x):
        return _kkt_residual(prob, x[:K], x[K:K + m], x[-1], active)

    f = resid(x)
    for _ in range(iters):
        J = np.empty((f.size, x.size))
        for c in range(x.size):
            step = 1e-7 * max(1e-3, abs(x[c]))
            xp, xm = x.copy(), x.copy()
            xp[c] += step
            xm[c] -= step
            if c < K and xm[c] <= 0:
                xm[c] = x[c]
                J[:, c] = (resid(xp) - f) / step
                continue
            J[:, c] = (resid(xp) - resid(xm)) / (2 * step)
        dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        t = 1.0
        while t > 1e-4:
            xn = x + t * dx
            if np.all(xn[:K] > 0):
                fn = resid(xn)
                if np.linalg.norm(fn) < np.linalg.norm(f):
                    break
            t *= 0.5
        else:
            break
        x, f = xn, fn
        if np.linalg.norm(f) < 1e-15:
            break
    p = x[:K] / x[:K].sum()
    return p


def _two_arm(prob):
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        _, G, _ = prob.details(np.array([mid, 1.0 - mid]))
        if G[0, 0] - G[0, 1] > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16:
            break
    return np.array([0.5 * (lo + hi), 1.0 - 0.5 * (lo + hi)])


def solve(query: Query, theta, family: RewardFamily | None = None):
    """Maximin allocation and its value.

    Closed forms cover single-arm pitfall sets (p proportional to 1/d),
    a single whole-vector pitfall (a vertex) and two-arm pair problems
    (bisection). Otherwise a normalised projected subgradient warm start is
    refined by SLSQP on the epigraph form and polished by Newton steps on the
    active KKT system.

    Returns:
        ``(Allocation, gamma_star)``.

    Raises:
        SolverError: the final iterate fails certification at 1e-6.
    """
    prob = _Problem(query, theta, family)
    kinds = set(prob.pfi[:, 0].tolist())
    if kinds == {g.PF_ARM}:
        _, G, _ = prob.details(np.ones(prob.K))
        d = G.sum(axis=0)
        p = (1.0 / d) / (1.0 / d).sum()
        return Allocation(p), float(prob.values(p).min())
    if kinds == {g.PF_WHOLE}:
        _, G, _ = prob.details(np.ones(prob.K))
        p = np.zeros(prob.K)
        p[int(np.argmax(G[0]))] = 1.0
        return Allocation(p), float(prob.values(p).min())
    if prob.K == 2 and prob.m == 1:
        p = _two_arm(prob)
        return Allocation(p), float(prob.values(p).min())

    p0 = np.full(prob.K, 1.0 / prob.K)
    p, v = _subgradient(prob, p0, SUBGRAD_ITERS)
    p = _slsqp(prob, p, max(v, 1e-300))
    cert = None
    for _ in range(3):
        p = _newton_polish(prob, p)
        if np.all(p > 0):
            cert = _certify(prob, p)
            if cert.max_residual <= CERT_TOL:
                break
    if cert is None or cert.max_residual > CERT_TOL:
        raise SolverError("allocation solver failed to certify its best iterate", p, cert)
    return Allocation(p / p.sum()), float(prob.values(p).min())


def _certify(prob, p):
    vals, _, H = prob.details(p)
    gamma = vals.min()
    active = np.flatnonzero(vals <= gamma + SLACK_TOL * max(1.0, gamma))
    A = H[active].T
    mu_a, _ = nnls(A, p)
    singular = np.linalg.matrix_rank(A) < active.size
    mu = np.zeros(prob.m)
    mu[active] = mu_a
    stat = float(np.max(np.abs(p - H.T @ mu)))
    slack = float(np.max(mu * np.abs(gamma - vals)))
    return DualCertificate(mu, float(gamma), stat, slack, float(abs(mu.sum() - 1.0)),
                           prob.tags(), bool(singular))


def certify(query: Query, theta, p, family: RewardFamily | None = None) -> DualCertificate:
    """Dual weights and KKT residuals of allocation ``p``.

    Residuals are reported, not thresholded. ``singular`` flags a
    rank-deficient restricted stationarity system, in which case ``mu`` is the
    nonnegative least-squares solution.

    Raises:
        DomainError: some component of ``p`` is not strictly positive.
    """
    p = np.asarray(getattr(p, "weights", p), dtype=float)
    if np.any(~(p > 0)):
        raise DomainError("certification requires a strictly positive allocation")
    return _certify(_Problem(query, theta, family), p)


def overall_balance_residual(p, best: int, variances) -> float:
    """Signed ``p_best**2/var_best - sum_{j != best} p_j**2/var_j``."""
    p = np.asarray(getattr(p, "weights", p), dtype=float)
    var = np.broadcast_to(np.asarray(variances, dtype=float), p.shape)
    if not 0 <= best < p.size:
        raise DomainError(f"arm index {best} out of range")
    ratio = p * p / var
    return float(ratio[best] - (ratio.sum() - ratio[best]))


def pitfall_values(query: Query, theta, p, family: RewardFamily | None = None) -> dict[Pitfall, float]:
    """Chernoff information of every pitfall at allocation ``p``."""
    prob = _Problem(query, theta, family)
    vals = prob.values(np.asarray(getattr(p, "weights", p), dtype=float))
    return dict(zip(prob.tags(), vals.tolist()))
