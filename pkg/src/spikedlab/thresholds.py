"""Threshold machinery: the Wishart lower-bound function ``F(beta, t)`` and its
checker, phase-diagram curves, the conditioning-method optimiser and a few
closed-form bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar
from scipy.special import logsumexp, xlogy

from spikedlab.priors import RateFunction, SparseRademacher, atom_law, rate_for

_ENDPOINT = 1e-6
_SMALL_BETA = 5e-3

# --------------------------------------------------------------------------
# F(beta, t)


def _F_series(beta, t):
    # Taylor expansion in t about 0 through t^8
    b = beta
    c2 = b * b / 2
    c4 = -b * b * (b * b + 4 * b + 2) / 4
    c6 = b * b * (2 * b**4 + 12 * b**3 + 24 * b * b + 16 * b + 3) / 6
    c8 = -b * b * (5 * b**6 + 40 * b**5 + 124 * b**4 + 184 * b**3 + 130 * b * b + 40 * b + 4) / 8
    t2 = t * t
    return t2 * (c2 + t2 * (c4 + t2 * (c6 + t2 * c8)))


def _F_over_beta2_small_beta(beta, t):
    # Taylor expansion in beta about 0 through beta^3, in q = t^2
    q = t * t
    r = 1 + q
    c0 = q / (2 * r)
    c1 = -q * q * (q + 3) / (3 * r**3)
    c2 = q * q * (q**3 + 5 * q * q + 11 * q - 1) / (4 * r**5)
    c3 = -q**3 * (q**4 + 7 * q**3 + 21 * q * q + 45 * q - 10) / (5 * r**7)
    return c0 + beta * (c1 + beta * (c2 + beta * c3))


def F_nc(beta: float, t):
    """``F(beta, t)`` for ``beta > -1`` and ``t`` in ``[0, 1]``.

    With ``A = (1-t^2)/(2t(1+beta))`` and ``w = sqrt(A^2+1) - A`` (formed as
    ``1/(sqrt(A^2+1) + A)`` to avoid cancellation),
    ``F = (1+beta) t (w-t)/(1-t^2) + log((1-w^2)/(1-t^2))/2``, with ``w - t``
    and ``1 - w^2`` rearranged so no difference of nearby numbers is formed.
    Taylor series cover small ``t``, ``t`` within 1e-6 of 1 (where the value
    tends to ``(beta - log(1+beta))/2``) and ``|beta| < 5e-3``.
    """
    if beta <= -1:
        raise ValueError("F(beta, t) needs beta > -1")
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    if abs(beta) < _SMALL_BETA:
        # the closed form loses ~eps/beta^2 relative accuracy to cancellation here
        out = beta * beta * _F_over_beta2_small_beta(beta, t)
        return out if out.ndim else float(out)
    out = np.empty_like(t)
    small = t < 1e-2 / (abs(beta) + 2)
    # the expansion about t = 1 has relative error ~(eps/(1+beta))^3; keep it below 1e-16
    top = 1 - t < _ENDPOINT * min(1.0, 1 + beta)
    mid = ~(small | top)
    out[small] = _F_series(beta, t[small])
    eps = 1 - t[top]
    # expansion about t = 1 through eps^2
    out[top] = 0.5 * (beta - math.log1p(beta)) - beta * beta * eps * (2 + eps) / (8 * (1 + beta))
    tm = t[mid]
    d = 1 - tm
    one_minus_t2 = d * (1 + tm)
    A = one_minus_t2 / (2 * tm * (beta + 1))
    S = np.sqrt(A * A + 1)
    w = 1.0 / (S + A)
    # 1 - w = (A + A^2/(S+1)) w and 1 - w^2 = 2 A w, both free of cancellation
    w_minus_t = d - (A + A * A / (S + 1)) * w
    with np.errstate(divide="ignore"):
        log_w = np.where(w < 0.5, np.log1p(-w * w), np.log(2 * A * w))
        log_t = np.where(tm < 0.5, np.log1p(-tm * tm), np.log(one_minus_t2))
    out[mid] = (1 + beta) * tm * w_minus_t / one_minus_t2 + 0.5 * (log_w - log_t)
    return out if out.ndim else float(out)


def F_over_beta2(beta: float, t):
    """``F(beta, t)/beta^2`` with its ``beta -> 0`` limit ``t^2/(2(1+t^2))``."""
    t = np.asarray(t, dtype=float)
    if abs(beta) < _SMALL_BETA:
        out = _F_over_beta2_small_beta(beta, t)
        return out if out.ndim else float(out)
    return F_nc(beta, t) / (beta * beta)


# --------------------------------------------------------------------------
# lower-bound condition


@dataclass(frozen=True)
class LowerBoundCheck:
    holds: bool
    witness: float | None
    sup_ratio: float  # sup_t F(beta,t)/f(t), including the t -> 0 curvature ratio

    def __bool__(self):
        return self.holds


class LowerBoundChecker:
    """Checks ``gamma* f(t) >= F(beta, t)`` on ``(0, 1)`` for one rate function.

    The rate function is tabulated once on a grid mixing log-spaced points near
    0 with linear points, so sweeps over ``beta`` and ``gamma*`` are cheap.
    Both sides vanish to second order at 0, so the grid is supplemented by the
    curvature comparison ``gamma* c >= beta^2/2`` with ``c = lim f(t)/t^2``.
    """

    def __init__(self, rate_fn: RateFunction, grid_size: int = 10_000, rtol: float = 1e-9):
        self.rate_fn = rate_fn
        self.rtol = rtol
        half = grid_size // 2
        self.t = np.unique(np.concatenate([np.geomspace(1e-4, 0.1, half),
                                           np.linspace(0.1, 1 - 1e-9, grid_size - half)]))
        self.f = np.asarray(rate_fn(self.t), dtype=float)
        if np.any(self.f <= 0):
            raise ValueError("rate function must be positive on (0, 1)")
        self._cache: dict[float, tuple[float, float]] = {}

    def sup_ratio(self, beta: float) -> tuple[float, float]:
        """``(sup_t F/f, argmax t)``; ``t = 0`` marks the curvature limit."""
        if beta in self._cache:
            return self._cache[beta]
        r = F_nc(beta, self.t) / self.f
        k = int(np.argmax(r))
        best, arg = float(r[k]), float(self.t[k])
        lo, hi = self.t[max(k - 1, 0)], self.t[min(k + 1, self.t.size - 1)]
        if hi > lo:
            res = minimize_scalar(lambda s: -float(F_nc(beta, s)) / float(self.rate_fn(s)),
                                  bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
            if -res.fun > best:
                best, arg = float(-res.fun), float(res.x)
        curv = beta * beta / (2 * self.rate_fn.curvature)
        if curv >= best:
            best, arg = curv, 0.0
        self._cache[beta] = (best, arg)
        return best, arg

    def check(self, beta: float, gamma_star: float) -> LowerBoundCheck:
        if gamma_star <= 0:
            raise ValueError("gamma* must be positive")
        sup, arg = self.sup_ratio(beta)
        holds = sup <= gamma_star * (1 + self.rtol)
        if holds:
            return LowerBoundCheck(True, None, sup)
        if arg == 0.0:
            return LowerBoundCheck(False, float(self.t[0]), sup)
        # report the first grid point that actually violates, else the argmax
        viol = gamma_star * self.f < F_nc(beta, self.t) * (1 - self.rtol)
        near = self.t[viol]
        witness = float(near[np.argmin(np.abs(near - arg))]) if near.size else arg
        return LowerBoundCheck(False, witness, sup)

    def minimal_gamma(self, beta: float, tol: float = 1e-4) -> float:
        """Smallest ``gamma*`` passing :meth:`check`, by bisection to ``tol``."""
        sup, _ = self.sup_ratio(beta)
        if sup == 0:
            return 0.0
        lo, hi = 0.0, sup * (1 + 2 * self.rtol) + tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.check(beta, mid).holds:
                hi = mid
            else:
                lo = mid
        return hi


def wishart_lower_bound_holds(rate_fn, beta: float, gamma_star: float, grid_size: int = 10_000) -> LowerBoundCheck:
    """Whether ``gamma* f(t) >= F(beta, t)`` for all ``t`` in ``(0, 1)``."""
    return LowerBoundChecker(_as_rate(rate_fn), grid_size).check(beta, gamma_star)


def _as_rate(rate_fn) -> RateFunction:
    return rate_fn if isinstance(rate_fn, RateFunction) else rate_for(rate_fn)


# --------------------------------------------------------------------------
# phase-diagram curves


@dataclass(frozen=True)
class Curve:
    name: str
    beta: np.ndarray
    gamma: np.ndarray
    note: str = ""


def wishart_lower_curve(rate_fn, betas, tol: float = 1e-4, grid_size: int = 10_000,
                        checker: LowerBoundChecker | None = None) -> Curve:
    """Minimal ``gamma*`` for which the lower-bound condition holds, per ``beta``."""
    rate = _as_rate(rate_fn)
    chk = checker or LowerBoundChecker(rate, grid_size)
    betas = np.asarray(betas, dtype=float)
    gammas = np.array([chk.minimal_gamma(b, tol) for b in betas])
    return Curve(f"lower:{rate.name}", betas, gammas, rate.note)


def pca_optimal(checker: LowerBoundChecker, beta: float) -> bool:
    """Whether the lower bound reaches the spectral threshold ``gamma = beta^2``."""
    return checker.check(beta, beta * beta).holds


def lower_curve_departure(rate_fn, lo: float = -0.99, hi: float = -0.5, tol: float = 1e-5,
                          grid_size: int = 10_000) -> float:
    """Largest negative ``beta`` below which the lower curve leaves ``beta^2``.

    Bisection on the predicate :func:`pca_optimal`; requires it to fail at
    ``lo`` and hold at ``hi``.
    """
    chk = LowerBoundChecker(_as_rate(rate_fn), grid_size)
    if pca_optimal(chk, lo) or not pca_optimal(chk, hi):
        raise ValueError("the departure point is not bracketed by [lo, hi]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pca_optimal(chk, mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sparse_log_support(rho: float) -> float:
    """``log c = rho log 2 + H(rho)`` for supports with ``rho n`` signed nonzeros."""
    return rho * math.log(2) - float(xlogy(rho, rho) + xlogy(1 - rho, 1 - rho))


def mle_gamma(log_c: float, beta):
    """``(beta - log(1+beta)) / (2 log c)``: the MLE test works below this ``gamma``."""
    if log_c <= 0:
        raise ValueError("log c must be positive")
    beta = np.asarray(beta, dtype=float)
    if np.any(beta <= -1):
        raise ValueError("beta must exceed -1")
    out = (beta - np.log1p(beta)) / (2 * log_c)
    return out if out.ndim else float(out)


def mle_upper_curve(log_c: float, betas) -> Curve:
    betas = np.asarray(betas, dtype=float)
    return Curve("mle", betas, np.asarray(mle_gamma(log_c, betas)))


def mle_pca_crossing(log_c: float, lo: float = -1 + 1e-9, hi: float = -1e-6) -> float:
    """Negative ``beta`` where the MLE curve meets ``gamma = beta^2``."""
    h = lambda b: mle_gamma(log_c, b) - b * b  # noqa: E731
    if h(lo) * h(hi) > 0:
        raise ValueError("no crossing with the spectral threshold in the bracket")
    return float(brentq(h, lo, hi, xtol=1e-12))


@dataclass(frozen=True)
class PhasePoint:
    beta: float
    gamma: float
    verdict: str  # contiguous | pca_detects | mle_detects | open
    note: str = ""


def classify(beta: float, gamma: float, checker: LowerBoundChecker | None = None,
             log_c: float | None = None) -> PhasePoint:
    """Verdict at ``(beta, gamma)``; PCA first, then MLE, then the lower bound."""
    if beta * beta > gamma:
        return PhasePoint(beta, gamma, "pca_detects")
    if log_c is not None and beta != 0 and gamma < mle_gamma(log_c, beta):
        return PhasePoint(beta, gamma, "mle_detects")
    if checker is not None and checker.check(beta, gamma).holds:
        return PhasePoint(beta, gamma, "contiguous", checker.rate_fn.note)
    return PhasePoint(beta, gamma, "open")


# --------------------------------------------------------------------------
# closed-form bounds


def wigner_wishart_crude_bound(lambda_star: float, gamma: float) -> float:
    """Largest ``|beta|`` covered by transferring a Wigner bound: ``sqrt(1 - exp(-gamma lambda*^2))``."""
    if not 0 <= lambda_star <= 1 or gamma <= 0:
        raise ValueError("need lambda* in [0, 1] and gamma > 0")
    return math.sqrt(-math.expm1(-gamma * lambda_star * lambda_star))


def subgaussian_wishart_bound(sigma: float, beta: float) -> float:
    """Smallest ``gamma`` covered for positive ``beta``: ``beta^2 sigma^2``."""
    if beta <= 0:
        raise ValueError("the subgaussian bound is for beta > 0")
    if sigma < 1:
        raise ValueError("sigma must be at least 1 for a unit-variance prior")
    return beta * beta * sigma * sigma


def largebeta_rate(values, probs, t):
    """``min(t^2 - log M(t), t^2 - log M(-t))`` with ``M(s) = sum pi_a pi_b e^(s a b)``."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    ab = np.outer(v, v).ravel()
    logw = np.log(np.outer(p, p).ravel(), where=np.outer(p, p).ravel() > 0,
                  out=np.full(ab.size, -np.inf))
    t = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t).ravel()

    def logM(s):
        return logsumexp(logw[None, :] + s[:, None] * ab[None, :], axis=1)

    out = flat * flat - np.maximum(logM(flat), logM(-flat))
    return out.reshape(t.shape) if t.ndim else float(out[0])


def monotonicity_check_F(beta_grid, t_grid, limit_tol: float = 1e-2) -> tuple[bool, tuple | None]:
    """Check ``F/beta^2`` strictly decreasing in ``beta`` at every ``t`` and the
    ``beta -> -1`` limit ``-log(1-t^2)/2`` at ``beta = -0.999``.

    Returns ``(ok, worst)`` where ``worst`` names the offending pair.
    """
    betas = np.sort(np.asarray(beta_grid, dtype=float))
    ts = np.asarray(t_grid, dtype=float)
    vals = np.array([F_over_beta2(b, ts) for b in betas])
    steps = np.diff(vals, axis=0)
    if steps.size and np.max(steps) >= 0:
        i, j = np.unravel_index(int(np.argmax(steps)), steps.shape)
        return False, ("not decreasing", float(betas[i]), float(betas[i + 1]), float(ts[j]))
    gap = np.abs(F_over_beta2(-0.999, ts) + 0.5 * np.log1p(-ts * ts))
    if np.max(gap) > limit_tol:
        j = int(np.argmax(gap))
        return False, ("beta -> -1 limit", -0.999, float(ts[j]), float(gap[j]))
    return True, None


# --------------------------------------------------------------------------
# conditioning method


def _kl_term(alpha, base):
    """``alpha log(alpha/base) - alpha + base`` without cancellation near ``alpha = base``.

    The added ``base - alpha`` terms sum to zero over a coupling, so summing
    these gives the KL divergence.
    """
    alpha = np.asarray(alpha, dtype=float)
    u = alpha / base - 1
    series = u * u * (1 / 2 + u * (-1 / 6 + u * (1 / 12 - u / 20)))
    with np.errstate(invalid="ignore"):
        direct = xlogy(alpha, alpha / base) - alpha + base
    return base * np.where(np.abs(u) < 1e-3, series, direct / base)


def _kl(alpha, base):
    return np.sum(_kl_term(alpha, base), axis=-1)


@dataclass
class ConditioningProblem:
    """``sup <alpha, B>^2 / (2 D(alpha, pi pi^T))`` over couplings of ``pi`` with itself."""

    values: np.ndarray
    probs: np.ndarray
    payoff: np.ndarray = field(init=False)
    base: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.probs = np.asarray(self.probs, dtype=float)
        keep = self.probs > 0
        self.values, self.probs = self.values[keep], self.probs[keep]
        if abs(self.probs.sum() - 1) > 1e-12:
            raise ValueError("atom probabilities must sum to 1")
        if abs(self.probs @ self.values) > 1e-12 or abs(self.probs @ self.values**2 - 1) > 1e-12:
            raise ValueError("atoms must have mean 0 and variance 1")
        self.payoff = np.outer(self.values, self.values)
        self.base = np.outer(self.probs, self.probs)

    @property
    def s(self) -> int:
        return self.values.size

    def ratio(self, alpha: np.ndarray) -> float:
        """Objective at a coupling; the 0/0 point at the baseline scores by its local limit."""
        alpha = np.asarray(alpha, dtype=float).reshape(self.s, self.s)
        d = alpha - self.base
        D = float(_kl(alpha.ravel(), self.base.ravel()))
        if D < 1e-12:
            den = float(np.sum(d * d / self.base))
            return float(np.sum(d * self.payoff)) ** 2 / den if den > 0 else 1.0
        return float(np.sum(alpha * self.payoff)) ** 2 / (2 * D)


def _sup_two_atoms(prob: ConditioningProblem, m: int = 4096) -> float:
    p1, p2 = prob.probs
    lo, hi = max(0.0, p1 - p2), p1
    best = 1.0
    for _ in range(3):
        u = np.linspace(lo, hi, m)
        A = np.stack([u, p1 - u, p1 - u, p2 - p1 + u], axis=1)
        D = _kl(A, prob.base.ravel())
        num = (A @ prob.payoff.ravel()) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(D > 1e-12, num / (2 * D), -np.inf)
        k = int(np.argmax(r))
        best = max(best, float(r[k]))
        w = 8 * (hi - lo) / (m - 1)
        lo, hi = max(max(0.0, p1 - p2), u[k] - w), min(p1, u[k] + w)
    return best


def _symmetric_three_atom(values, probs):
    order = np.argsort(values)
    v, p = np.asarray(values)[order], np.asarray(probs)[order]
    if v.size == 3 and v[1] == 0 and np.isclose(v[0], -v[2], rtol=0, atol=1e-12) and np.isclose(p[0], p[2], rtol=0, atol=1e-12):
        return float(v[2]), float(p[0])
    return None


def _sparse_grid_ratio(amp, half, A, B):
    # alpha_{++}=alpha_{--}=A, alpha_{+-}=alpha_{-+}=B; the zero row/column fills the rest
    p0 = 1 - 2 * half
    a_p0 = half - A - B
    a_00 = p0 - 2 * a_p0
    D = (2 * _kl_term(A, half**2) + 2 * _kl_term(B, half**2)
         + 4 * _kl_term(a_p0, half * p0) + _kl_term(a_00, p0**2))
    num = (amp * amp * (2 * A - 2 * B)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / (2 * D)
    r[(a_p0 < 0) | (a_00 < 0) | ~(D >= 1e-12)] = -np.inf
    return r


def _sup_symmetric_three(amp: float, half: float, m: int = 1024, rounds: int = 2, window: int = 8) -> float:
    lo_a, hi_a, lo_b, hi_b = 0.0, half, 0.0, half
    best = 1.0  # local limit at the product coupling
    for _ in range(rounds + 1):
        a = np.linspace(lo_a, hi_a, m)
        b = np.linspace(lo_b, hi_b, m)
        R = _sparse_grid_ratio(amp, half, a[:, None], b[None, :])
        i, j = np.unravel_index(int(np.argmax(R)), R.shape)
        if R[i, j] > best:
            best = float(R[i, j])
        da = window * (hi_a - lo_a) / (m - 1)
        db = window * (hi_b - lo_b) / (m - 1)
        lo_a, hi_a = max(0.0, a[i] - da), min(half, a[i] + da)
        lo_b, hi_b = max(0.0, b[j] - db), min(half, b[j] + db)
    return best


def _sup_general(prob: ConditioningProblem, starts: int = 24, seed: int = 0) -> float:
    s = prob.s
    pi = prob.probs
    cons = [{"type": "eq", "fun": (lambda a, i=i: a.reshape(s, s)[i].sum() - pi[i])} for i in range(s)]
    cons += [{"type": "eq", "fun": (lambda a, i=i: a.reshape(s, s)[:, i].sum() - pi[i])} for i in range(s - 1)]
    gen = np.random.Generator(np.random.Philox(seed))
    best = 1.0
    # vertices of the polytope (permutation-like couplings) plus random interior starts
    seeds = [np.eye(s)[list(perm)] for perm in permutations(range(s))]
    seeds += [gen.dirichlet(np.ones(s * s)).reshape(s, s) for _ in range(starts)]
    for S0 in seeds:
        x0 = _sinkhorn(np.maximum(S0, 1e-3), pi)
        res = minimize(lambda a: -prob.ratio(np.maximum(a, 0)), x0.ravel(), method="SLSQP",
                       bounds=[(0, 1)] * (s * s), constraints=cons, options={"ftol": 1e-14, "maxiter": 500})
        if res.success or res.status in (8, 9):
            val = prob.ratio(np.maximum(res.x, 0))
            if np.isfinite(val):
                best = max(best, val)
    return best


def _sinkhorn(M, pi, iters=500):
    M = np.array(M, dtype=float)
    for _ in range(iters):
        M *= (pi / M.sum(axis=1))[:, None]
        M *= (pi / M.sum(axis=0))[None, :]
    return M


def conditioning_sup(values, probs) -> float:
    """``sup_alpha <alpha, B>^2 / (2 D(alpha, pi pi^T))`` (at least 1, the local limit)."""
    prob = ConditioningProblem(values, probs)
    if prob.s == 1:
        raise ValueError("a single atom cannot have unit variance")
    if prob.s == 2:
        return _sup_two_atoms(prob)
    sym = _symmetric_three_atom(prob.values, prob.probs)
    if sym is not None:
        return _sup_symmetric_three(*sym)
    if prob.s > 4:
        raise ValueError("the coupling optimiser supports at most 4 atoms")
    return _sup_general(prob)


def conditioning_lambda_bar(prior_or_values, probs=None) -> float:
    """``lambda_bar = sup^(-1/2)``; accepts a prior or explicit atoms."""
    if probs is None:
        values, probs = atom_law(prior_or_values)
    else:
        values = prior_or_values
    return conditioning_sup(values, probs) ** -0.5


def sparse_conditioning_below_one(rho: float, rel: float = 1e-9) -> bool:
    """Whether the conditioning method stops short of ``lambda = 1`` at sparsity ``rho``."""
    return conditioning_sup(*atom_law(SparseRademacher(rho))) > 1 + rel


def rho_star(tolerance: float = 1e-3, lo: float = 0.05, hi: float = 1 / 3) -> float:
    """Critical sparsity below which the conditioning method gives ``lambda_bar < 1``."""
    if tolerance < 1e-4:
        raise ValueError("tolerance must be at least 1e-4")
    if not sparse_conditioning_below_one(lo) or sparse_conditioning_below_one(hi):
        raise ValueError("rho* is not bracketed")
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if sparse_conditioning_below_one(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


__all__ = [
    "Curve",
    "F_nc",
    "F_over_beta2",
    "LowerBoundCheck",
    "LowerBoundChecker",
    "PhasePoint",
    "classify",
    "conditioning_lambda_bar",
    "conditioning_sup",
    "largebeta_rate",
    "lower_curve_departure",
    "mle_gamma",
    "mle_pca_crossing",
    "mle_upper_curve",
    "monotonicity_check_F",
    "rho_star",
    "sparse_log_support",
    "subgaussian_wishart_bound",
    "wigner_wishart_crude_bound",
    "wishart_lower_bound_holds",
    "wishart_lower_curve",
]
