"""Second moments of the spiked-vs-unspiked likelihood ratio and the power bound
they imply."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from spikedlab.ensembles import sample_count
from spikedlab.priors import overlap_samples

KUMMER_MAX_ARG = 700.0
HEAVY_TAIL_MASS = 0.5


class HeavyTailWarning(RuntimeWarning):
    """The top 1% of Monte Carlo terms carries most of the estimate."""


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float
    trials: int
    diverged_count: int = 0
    top1pct_mass: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.diverged_count > 0

    @property
    def heavy_tailed(self) -> bool:
        return self.top1pct_mass > HEAVY_TAIL_MASS


def summarize_terms(terms: np.ndarray, trials: int, diverged: int) -> MomentEstimate:
    kept = terms.size
    if kept == 0:
        return MomentEstimate(math.inf, math.inf, trials, diverged, 1.0)
    mean = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(kept)) if kept > 1 else math.inf
    top = max(1, kept // 100)
    total = float(terms.sum())
    mass = float(np.partition(terms, kept - top)[kept - top :].sum() / total) if total > 0 else 0.0
    est = MomentEstimate(mean, se, trials, diverged, mass)
    if est.heavy_tailed:
        warnings.warn(
            f"top 1% of terms carries {mass:.0%} of the second-moment estimate; it is unreliable",
            HeavyTailWarning,
            stacklevel=3,
        )
    return est


def gwig_terms(lam: float, overlaps: np.ndarray, n: int) -> np.ndarray:
    return np.exp(0.5 * n * lam * lam * np.square(overlaps))


def gwig_second_moment_mc(lam: float, prior, n: int, trials: int, rng: np.random.Generator) -> MomentEstimate:
    """Monte Carlo of ``E exp(n lam^2 <x,x'>^2 / 2)`` over independent spike pairs."""
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    if lam == 0:
        return MomentEstimate(1.0, 0.0, trials)
    return summarize_terms(gwig_terms(lam, overlap_samples(prior, n, trials, rng), n), trials, 0)


def gwig_second_moment_spherical_exact(lam: float, n: int) -> float:
    """``1F1(1/2; n/2; n lam^2 / 2)`` by the Kummer series, ratios kept in log space."""
    if n < 3:
        raise ValueError("the spherical formula needs n >= 3")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    z = 0.5 * n * lam * lam
    if z > KUMMER_MAX_ARG:
        raise OverflowError(
            f"n lam^2/2 = {z:.4g} exceeds {KUMMER_MAX_ARG:g}; use second_moment_limit for large n"
        )
    if z == 0:
        return 1.0
    a, b = 0.5, 0.5 * n
    logz = math.log(z)
    total, k = 1.0, 0
    while True:
        k += 1
        log_term = gammaln(a + k) - gammaln(a) - gammaln(b + k) + gammaln(b) + k * logz - gammaln(k + 1)
        term = math.exp(log_term)
        total += term
        # terms decrease once k > z; stop when they no longer move the sum
        if k > z and term < 1e-16 * total:
            return total
        if k > 100000:
            raise ArithmeticError("Kummer series failed to converge")


def second_moment_limit(lam: float) -> float:
    """``(1 - lam^2)^(-1/2)``, the large-n second moment below the spectral threshold."""
    if not 0 <= lam < 1:
        raise ValueError("the limit is finite only for 0 <= lambda < 1")
    return 1.0 / math.sqrt(1.0 - lam * lam)


def wishart_terms(beta: float, overlaps: np.ndarray, N: int) -> tuple[np.ndarray, int]:
    """Terms ``(1 - beta^2 <x,x'>^2)^(-N/2)``; singular draws are dropped and counted."""
    base = 1.0 - beta * beta * np.square(overlaps)
    ok = base > 0
    return np.exp(-0.5 * N * np.log(base[ok])), int(np.count_nonzero(~ok))


def wishart_second_moment_mc(beta: float, gamma: float, prior, n: int, trials: int,
                             rng: np.random.Generator) -> MomentEstimate:
    """Monte Carlo of ``E (1 - beta^2 <x,x'>^2)^(-N/2)`` with ``N = round(n/gamma)``."""
    if abs(beta) >= 1:
        raise ValueError("the Wishart second moment needs |beta| < 1")
    if trials < 2:
        raise ValueError("need at least two trials for a standard error")
    if beta == 0:
        return MomentEstimate(1.0, 0.0, trials)
    N = sample_count(n, gamma)
    terms, bad = wishart_terms(beta, overlap_samples(prior, n, trials, rng), N)
    return summarize_terms(terms, trials, bad)


def power_bound(second_moment: float, type1: float) -> float:
    """Smallest type II error ``b`` with ``(1-b)^2/a + b^2/(1-a) <= S``."""
    a, S = type1, second_moment
    if not 0 < a < 1:
        raise ValueError("type I error must lie in (0, 1)")
    if S < 1:
        raise ValueError("second moments are at least 1")
    disc = a * (1 - a) * (S - 1)
    return min(1.0, max(0.0, (1 - a) - math.sqrt(disc)))
