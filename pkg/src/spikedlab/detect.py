"""Detectors for spiked matrices: plain PCA, score-transformed PCA, the
exhaustive-search MLE test for Wishart and the exact point-mass test."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from spikedlab.ensembles import SymmetricMatrixSample
from spikedlab.noise import fisher_information

DENSE_LIMIT = 2000
MLE_CAP = 24


class EigenSolverError(RuntimeError):
    pass


class SupportTooLarge(ValueError):
    pass


@dataclass
class DetectionReport:
    """Outcome of one detector run.

    ``side`` names the rejection region: ``"greater"`` means spiked iff
    ``statistic > threshold`` and ``"less"`` means spiked iff ``statistic < threshold``
    (``"less_equal"`` for the point-mass test).
    """

    detector: str
    decision: str
    statistic: float
    threshold: float
    side: str
    spike_correlation: float | None = None
    elapsed: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def spiked(self) -> bool:
        return self.decision == "spiked"

    def as_dict(self) -> dict:
        return asdict(self)


def _decide(statistic: float, threshold: float, side: str) -> str:
    hit = {
        "greater": statistic > threshold,
        "less": statistic < threshold,
        "less_equal": statistic <= threshold,
    }[side]
    return "spiked" if hit else "unspiked"


def _matrix(sample) -> np.ndarray:
    return sample.entries if isinstance(sample, SymmetricMatrixSample) else np.asarray(sample, dtype=float)


# --------------------------------------------------------------------------
# eigen-solvers


def _check_residual(Y, lam, v, scale):
    resid = float(np.linalg.norm(Y @ v - lam * v))
    if resid > 1e-8 * max(scale, 1e-300):
        raise EigenSolverError(f"eigenpair residual {resid:.3g} exceeds 1e-8 * ||Y|| = {1e-8 * scale:.3g}")


def spectrum(sample) -> np.ndarray:
    """All eigenvalues in ascending order (dense symmetric solver)."""
    return np.linalg.eigvalsh(_matrix(sample))


def top_eig(sample, method: str = "auto", which: str = "largest") -> tuple[float, np.ndarray]:
    """Extreme eigenpair of a symmetric matrix.

    ``method="dense"`` is the reference path; ``"iterative"`` uses implicitly
    restarted Lanczos.  ``"auto"`` picks dense up to ``n = 2000``.
    Returns ``(eigenvalue, unit eigenvector)``.
    """
    Y = _matrix(sample)
    n = Y.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "iterative"
    if method == "dense" or n < 3:
        w, V = np.linalg.eigh(Y)
        k = -1 if which == "largest" else 0
        lam, v = float(w[k]), V[:, k]
        scale = max(abs(w[0]), abs(w[-1]))
    elif method == "iterative":
        try:
            w, V = eigsh(Y, k=1, which="LA" if which == "largest" else "SA", tol=1e-13, maxiter=20 * n)
        except ArpackNoConvergence as exc:
            raise EigenSolverError(f"Lanczos did not converge: {exc}") from exc
        lam, v = float(w[0]), V[:, 0]
        scale = float(np.linalg.norm(Y, 2)) if n <= 200 else float(np.abs(Y).sum(axis=1).max())
    else:
        raise ValueError(f"unknown eigen-solver method {method!r}")
    v = v / np.linalg.norm(v)
    _check_residual(Y, lam, v, scale)
    return lam, v


def _correlation(sample, v) -> float | None:
    spike = getattr(sample, "spike", None)
    if spike is None:
        return None
    return float(np.dot(v, spike) ** 2)


# --------------------------------------------------------------------------
# PCA


def wishart_edges(gamma: float) -> tuple[float, float]:
    """Marchenko-Pastur bulk edges ``(1 -/+ sqrt(gamma))^2``."""
    r = math.sqrt(gamma)
    return (1 - r) ** 2, (1 + r) ** 2


def default_margin(n: int, edge_scale: float = 1.0) -> float:
    """``4 n^(-2/3)`` times the edge scale: a few Tracy-Widom widths."""
    return 4.0 * n ** (-2.0 / 3.0) * edge_scale


def _wishart_edge_scales(gamma: float) -> tuple[float, float]:
    # Tracy-Widom widths of the MP edges, divided by n^(-2/3)
    r = math.sqrt(gamma)
    up = (1 + r) * (1 + 1 / r) ** (1 / 3) * gamma ** (2 / 3)
    lo = abs(1 - r) * abs(1 / r - 1) ** (1 / 3) * gamma ** (2 / 3)
    return lo, up


def pca_test(sample: SymmetricMatrixSample, margin: float | None = None, negative: bool = False,
             method: str = "auto") -> DetectionReport:
    """Top-eigenvalue test against the bulk edge.

    Wigner samples reject iff ``lambda_max > 2 + margin``.  Wishart samples
    reject iff ``lambda_max`` exceeds the upper MP edge by ``margin``; with
    ``negative=True`` a ``lambda_min`` below the lower edge by ``margin`` also
    rejects (needs ``gamma < 1``).
    """
    start = time.perf_counter()
    if sample.kind in ("gwig", "wig"):
        if margin is None:
            margin = default_margin(sample.n)
        if margin <= 0:
            raise ValueError("margin must be positive")
        lam, v = top_eig(sample, method)
        thr = 2.0 + margin
        return DetectionReport("pca", _decide(lam, thr, "greater"), lam, thr, "greater",
                               _correlation(sample, v), time.perf_counter() - start, {"edge": 2.0, "margin": margin})
    if sample.kind != "wish":
        raise ValueError(f"pca_test does not handle model kind {sample.kind!r}")

    gamma = sample.gamma
    lo_edge, up_edge = wishart_edges(gamma)
    if negative and gamma >= 1:
        raise ValueError("negative-spike mode needs gamma < 1; the bulk touches 0 otherwise")
    lo_scale, up_scale = _wishart_edge_scales(gamma)
    up_margin = default_margin(sample.n, up_scale) if margin is None else margin
    lo_margin = default_margin(sample.n, lo_scale) if margin is None else margin
    if up_margin <= 0 or lo_margin <= 0:
        raise ValueError("margin must be positive")
    lam, v = top_eig(sample, method)
    extra = {"upper_edge": up_edge, "margin": up_margin, "lambda_max": lam}
    if not negative:
        thr = up_edge + up_margin
        return DetectionReport("pca", _decide(lam, thr, "greater"), lam, thr, "greater",
                               _correlation(sample, v), time.perf_counter() - start, extra)
    lam_min, v_min = top_eig(sample, method, which="smallest")
    # signed excess beyond the nearer-violated edge, in units of the edge margin
    excess_up = (lam - up_edge) / up_margin
    excess_lo = (lo_edge - lam_min) / lo_margin
    stat = max(excess_up, excess_lo)
    corr_v = v if excess_up >= excess_lo else v_min
    extra.update(lower_edge=lo_edge, lower_margin=lo_margin, lambda_min=lam_min)
    return DetectionReport("pca", _decide(stat, 1.0, "greater"), stat, 1.0, "greater",
                           _correlation(sample, corr_v), time.perf_counter() - start, extra)


# --------------------------------------------------------------------------
# score pre-transform


def pretransform(sample: SymmetricMatrixSample, noise) -> SymmetricMatrixSample:
    """Apply the score ``f = -p'/p`` entrywise to ``sqrt(n) Y``, zero the
    diagonal and rescale by ``1/sqrt(n)``."""
    raw = sample.scaled()
    out = noise.score(raw)
    np.fill_diagonal(out, 0.0)
    model = dict(sample.model, transform=noise.descriptor)
    return SymmetricMatrixSample(sample.n, out / math.sqrt(sample.n), model, sample.seed, sample.spike, raw=out)


def correlation_floor(lam: float, fisher: float) -> float:
    """Guaranteed asymptotic ``<v,x>^2`` after the transform, zero below threshold."""
    gap = lam - 1 / math.sqrt(fisher)
    return gap * gap / (lam * lam) if gap > 0 else 0.0


def pretransformed_pca_test(sample: SymmetricMatrixSample, noise, margin: float | None = None,
                            fisher: float | None = None, method: str = "auto") -> DetectionReport:
    """Reject iff ``lambda_max(f(Yhat))/sqrt(n) > 2 sqrt(F_P) + margin``."""
    start = time.perf_counter()
    fp = fisher_information(noise) if fisher is None else fisher
    edge = 2 * math.sqrt(fp)
    if margin is None:
        margin = default_margin(sample.n, math.sqrt(fp))
    if margin <= 0:
        raise ValueError("margin must be positive")
    transformed = pretransform(sample, noise)
    lam, v = top_eig(transformed, method)
    thr = edge + margin
    extra = {"edge": edge, "margin": margin, "fisher": fp}
    lam_true = sample.model.get("lambda")
    if sample.spike is not None and lam_true:
        extra["correlation_floor"] = correlation_floor(lam_true, fp)
        extra["predicted_top"] = lam_true * fp + 1 / lam_true if lam_true * math.sqrt(fp) > 1 else edge
    return DetectionReport("transform-pca", _decide(lam, thr, "greater"), lam, thr, "greater",
                           _correlation(sample, v), time.perf_counter() - start, extra)


# --------------------------------------------------------------------------
# exhaustive MLE for Wishart


def _sign_table(k: int) -> np.ndarray:
    """All ``2^k`` sign vectors of length ``k`` as rows."""
    idx = np.arange(2**k)[:, None] >> np.arange(k)[None, :]
    return 1.0 - 2.0 * (idx & 1)


def rademacher_quadratic_extremes(Y: np.ndarray, cap: int = MLE_CAP, chunk: int = 1 << 22) -> tuple[float, float]:
    """``(min, max)`` of ``s^T Y s / n`` over ``s`` in ``{-1,1}^n``.

    Fixes ``s_0 = +1`` (the form is even) and splits the coordinates in two
    blocks, so each block of candidates is scored with one matrix product.
    """
    n = Y.shape[0]
    if n > cap:
        raise SupportTooLarge(f"2^{n - 1} candidates exceeds the cap n <= {cap}; reduce n")
    a = max(1, (n + 1) // 2)
    b = n - a
    SA = _sign_table(a - 1)
    SA = np.hstack([np.ones((SA.shape[0], 1)), SA])
    SB = _sign_table(b)
    qA = np.einsum("ij,jk,ik->i", SA, Y[:a, :a], SA)
    qB = np.einsum("ij,jk,ik->i", SB, Y[a:, a:], SB) if b else np.zeros(1)
    lo, hi = np.inf, -np.inf
    step = max(1, chunk // SB.shape[0])
    cross_left = SA @ Y[:a, a:] if b else None
    for s in range(0, SA.shape[0], step):
        if b:
            block = qA[s : s + step, None] + qB[None, :] + 2.0 * (cross_left[s : s + step] @ SB.T)
        else:
            block = qA[s : s + step, None]
        lo, hi = min(lo, block.min()), max(hi, block.max())
    return float(lo) / n, float(hi) / n


def candidate_quadratic_extremes(Y: np.ndarray, candidates: np.ndarray, chunk: int = 4096) -> tuple[float, float]:
    """``(min, max)`` of ``v^T Y v / ||v||^2`` over the rows of ``candidates``."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    lo, hi = np.inf, -np.inf
    for s in range(0, C.shape[0], chunk):
        V = C[s : s + chunk]
        q = np.einsum("ij,jk,ik->i", V, Y, V) / np.einsum("ij,ij->i", V, V)
        lo, hi = min(lo, q.min()), max(hi, q.max())
    return float(lo), float(hi)


def mle_epsilon_interval(beta: float, gamma: float, log_c: float) -> tuple[float, float]:
    """Open interval of ``eps > 0`` for which the union bound vanishes.

    For ``beta < 0`` the condition is ``2 gamma log c - beta - eps + log(1+beta+eps) < 0``;
    for ``beta > 0`` the upper-tail analogue with ``beta - eps``.  Raises
    ``ValueError`` when no ``eps`` works.
    """
    if beta == 0 or beta <= -1:
        raise ValueError("beta must lie in (-1, 0) or (0, inf)")
    sign = 1.0 if beta < 0 else -1.0

    def g(eps):
        shifted = beta + sign * eps
        return 2 * gamma * log_c - shifted + math.log1p(shifted)

    if g(0.0) >= 0:
        raise ValueError(f"no feasible epsilon: 2 gamma log c >= beta - log(1+beta) at beta={beta}, gamma={gamma}")
    # g rises monotonically to 2 gamma log c > 0 as eps -> |beta|
    top = brentq(g, 0.0, abs(beta), xtol=1e-14)
    return 0.0, float(top)


def mle_wishart_test(sample: SymmetricMatrixSample, beta: float, epsilon: float,
                     candidates: np.ndarray | None = None, cap: int = MLE_CAP) -> DetectionReport:
    """Exhaustive-search test over the prior support.

    With ``candidates=None`` the support is all Rademacher sign vectors.
    ``beta < 0``: reject iff ``min v^T Y v/||v||^2 < 1+beta+eps``;
    ``beta > 0``: reject iff ``max v^T Y v/||v||^2 > 1+beta-eps``.
    Consumes ``Y`` only.
    """
    if beta == 0:
        raise ValueError("beta must be non-zero")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    start = time.perf_counter()
    Y = _matrix(sample)
    lo, hi = rademacher_quadratic_extremes(Y, cap) if candidates is None else candidate_quadratic_extremes(Y, candidates)
    if beta < 0:
        stat, thr, side = lo, 1 + beta + epsilon, "less"
    else:
        stat, thr, side = hi, 1 + beta - epsilon, "greater"
    spike = getattr(sample, "spike", None)
    extra = {"epsilon": epsilon}
    if spike is not None:
        extra["spike_form"] = float(spike @ Y @ spike / (spike @ spike))
    return DetectionReport("mle", _decide(stat, thr, side), stat, thr, side, None, time.perf_counter() - start, extra)


# --------------------------------------------------------------------------
# point-mass test


def point_mass_statistic(raw, c: float) -> float:
    """Fraction of off-diagonal entries of ``sqrt(n) Y`` exactly equal to ``c``."""
    R = raw.scaled() if isinstance(raw, SymmetricMatrixSample) else np.asarray(raw)
    iu = np.triu_indices(R.shape[0], 1)
    return float(np.count_nonzero(R[iu] == c)) / iu[0].size


def point_mass_test(raw, c: float, m: float, epsilon: float) -> DetectionReport:
    """Reject iff the fraction of entries equal to ``c`` is at most ``m - eps``."""
    if not 0 < m <= 1:
        raise ValueError("atom mass m must lie in (0, 1]")
    if not 0 < epsilon < m:
        raise ValueError("epsilon must lie in (0, m)")
    start = time.perf_counter()
    stat = point_mass_statistic(raw, c)
    thr = m - epsilon
    return DetectionReport("point-mass", _decide(stat, thr, "less_equal"), stat, thr, "less_equal",
                           None, time.perf_counter() - start, {"atom": c, "mass": m})


def chi2_chernoff(z: float, k: int) -> float:
    """Chernoff bound ``exp(k (1 - z + log z)/2)`` on the chi-square tail on the
    side of ``k`` that ``z k`` falls (lower for ``z < 1``, upper for ``z > 1``)."""
    if z <= 0:
        raise ValueError("z must be positive")
    if k < 1:
        raise ValueError("k must be a positive integer")
    return math.exp(0.5 * k * (1 - z + math.log(z)))
