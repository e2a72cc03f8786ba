"""Entrywise noise laws for the general Wigner model.

Continuous noise is a Gaussian mixture (a single standard component is the
Gaussian case).  All densities are formed in log space over components, so
the score ``-p'/p`` stays accurate far into the tails.

:class:`PointMassNoise` is a sampler only.  It has no density, so it never
feeds the score-based machinery; it exists for the exact-atom detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

_MOMENT_TOL = 1e-12


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian-mixture density ``sum_k w_k N(m_k, s_k^2)`` with unit variance.

    ``diagonal`` optionally overrides the law of diagonal entries.  When it is
    ``None`` the diagonal uses a variance-2 Gaussian for the pure Gaussian model
    (the GOE convention) and the off-diagonal law otherwise.
    """

    weights: tuple[float, ...]
    means: tuple[float, ...]
    sds: tuple[float, ...]
    name: str = "mixture"
    diagonal: "NoiseModel | None" = field(default=None, compare=False)
    check_moments: bool = field(default=True, compare=False)

    def __post_init__(self):
        for attr in ("weights", "means", "sds"):
            object.__setattr__(self, attr, tuple(float(v) for v in getattr(self, attr)))
        w, m, s = self._arrays()
        if not (len(w) == len(m) == len(s) >= 1):
            raise ValueError("mixture needs matching, non-empty weights/means/sds")
        if np.any(w <= 0) or abs(w.sum() - 1) > _MOMENT_TOL:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise ValueError("every component needs sd > 0 (the density must not vanish)")
        if self.check_moments:
            mean, var = self.mean, self.variance
            if abs(mean) > _MOMENT_TOL or abs(var - 1) > _MOMENT_TOL:
                raise ValueError(f"noise must have mean 0 and variance 1, got {mean:.3g}, {var:.15g}")

    def _arrays(self):
        return np.array(self.weights), np.array(self.means), np.array(self.sds)

    @property
    def mean(self) -> float:
        w, m, _ = self._arrays()
        return float(w @ m)

    @property
    def variance(self) -> float:
        w, m, s = self._arrays()
        return float(w @ (m**2 + s**2)) - self.mean**2

    @property
    def is_gaussian(self) -> bool:
        return len(self.weights) == 1 and self.means[0] == 0.0 and self.sds[0] == 1.0

    @property
    def support_radius(self) -> float:
        """Half-width beyond which ``p'^2/p`` carries negligible mass."""
        return max(abs(m) for m in self.means) + 12 * max(self.sds)

    # -- evaluators ---------------------------------------------------------

    def _component_logs(self, w):
        wt, m, s = self._arrays()
        w = np.asarray(w, dtype=float)[..., None]
        z = (w - m) / s
        logc = np.log(wt) - np.log(s) - 0.5 * math.log(2 * math.pi) - 0.5 * z * z
        return logc, z, s

    def logpdf(self, w):
        logc, _, _ = self._component_logs(w)
        return logsumexp(logc, axis=-1)

    def pdf(self, w):
        return np.exp(self.logpdf(w))

    def _weighted(self, w, poly):
        logc, z, s = self._component_logs(w)
        logp = logsumexp(logc, axis=-1)
        resp = np.exp(logc - logp[..., None])  # posterior component weights
        return logp, np.sum(resp * poly(z, s), axis=-1)

    def dpdf(self, w):
        logp, r = self._weighted(w, lambda z, s: -z / s)
        return np.exp(logp) * r

    def d2pdf(self, w):
        logp, r = self._weighted(w, lambda z, s: (z * z - 1) / (s * s))
        return np.exp(logp) * r

    def score(self, w):
        """``f(w) = -p'(w)/p(w)``."""
        _, r = self._weighted(w, lambda z, s: z / s)
        return r

    def score_derivative(self, w):
        """``f'(w) = (p'/p)^2 - p''/p``."""
        _, r1 = self._weighted(w, lambda z, s: z / s)
        _, r2 = self._weighted(w, lambda z, s: (z * z - 1) / (s * s))
        return r1 * r1 - r2

    # -- sampling -----------------------------------------------------------

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        w, m, s = self._arrays()
        if len(w) == 1:
            return m[0] + s[0] * rng.standard_normal(size)
        comp = rng.choice(len(w), size=size, p=w)
        return m[comp] + s[comp] * rng.standard_normal(size)

    def sample_diagonal(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.diagonal is not None:
            return self.diagonal.sample(rng, size)
        if self.is_gaussian:
            return math.sqrt(2.0) * rng.standard_normal(size)
        return self.sample(rng, size)

    @property
    def descriptor(self) -> str:
        if self.is_gaussian:
            return "gaussian"
        if self.name == "bimodal":
            return "bimodal"
        return "mix:" + ",".join(f"{w!r}@{m!r}@{s!r}" for w, m, s in zip(self.weights, self.means, self.sds))


@dataclass(frozen=True)
class PointMassNoise:
    """Finitely supported noise ``sum_i probs[i] delta(values[i])`` (sampler only)."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        v, p = np.array(self.values), np.array(self.probs)
        if len(v) == 0 or len(v) != len(p) or np.any(p < 0) or abs(p.sum() - 1) > _MOMENT_TOL:
            raise ValueError("point-mass noise needs matching values/probs summing to 1")
        if abs(p @ v) > _MOMENT_TOL or abs(p @ v**2 - 1) > _MOMENT_TOL:
            raise ValueError("point-mass noise must have mean 0 and variance 1")

    is_gaussian = False

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.array(self.values)[rng.choice(len(self.values), size=size, p=self.probs)]

    sample_diagonal = sample

    def mass_at(self, c: float) -> float:
        return float(sum(p for v, p in zip(self.values, self.probs) if v == c))

    @property
    def descriptor(self) -> str:
        return "discrete:" + ",".join(f"{v!r}@{p!r}" for v, p in zip(self.values, self.probs))


def standard_gaussian() -> NoiseModel:
    return NoiseModel((1.0,), (0.0,), (1.0,), name="gaussian")


def bimodal() -> NoiseModel:
    """Default strongly bimodal noise ``N(-0.9, 0.19)/2 + N(0.9, 0.19)/2``."""
    s = math.sqrt(0.19)
    return NoiseModel((0.5, 0.5), (-0.9, 0.9), (s, s), name="bimodal")


def parse_noise(text: str):
    """Build noise from ``gaussian``, ``bimodal``, ``mix:w@m@s,...`` or
    ``discrete:v@p,...`` (the last gives a :class:`PointMassNoise`)."""
    text = text.strip()
    if text == "gaussian":
        return standard_gaussian()
    if text == "bimodal":
        return bimodal()
    kind, _, rest = text.partition(":")
    if kind == "mix" and rest:
        comps = [tuple(float(v) for v in item.split("@")) for item in rest.split(",")]
        if any(len(c) != 3 for c in comps):
            raise ValueError("mixture components must look like weight@mean@sd")
        w, m, s = zip(*comps)
        return NoiseModel(w, m, s)
    if kind == "discrete" and rest:
        pairs = [tuple(float(v) for v in item.split("@")) for item in rest.split(",")]
        if any(len(p) != 2 for p in pairs):
            raise ValueError("discrete atoms must look like value@prob")
        v, p = zip(*pairs)
        return PointMassNoise(v, p)
    raise ValueError(f"unrecognised noise descriptor {text!r}")


# --------------------------------------------------------------------------
# derived quantities


def _integrate(fn, noise: NoiseModel, lo: float, hi: float, tol: float) -> float:
    breaks = sorted({m for m in noise.means if lo < m < hi})
    val, err = quad(fn, lo, hi, points=breaks or None, epsabs=tol * 1e-2, epsrel=1e-13, limit=500)
    if not np.isfinite(val) or err > tol:
        raise QuadratureError(
            f"quadrature on [{lo:.3g}, {hi:.3g}] returned {val!r} with error estimate {err:.3g} > {tol:.1g}"
        )
    return float(val)


def score(noise: NoiseModel, w):
    return noise.score(w)


def fisher_information(noise: NoiseModel, tol: float = 1e-10) -> float:
    """Translation Fisher information ``F_P = int p'(w)^2 / p(w) dw``."""
    T = noise.support_radius
    return _integrate(lambda w: float(noise.pdf(w) * noise.score(w) ** 2), noise, -T, T, tol)


def expected_score_derivative(noise: NoiseModel, tol: float = 1e-10) -> float:
    """``E f'(W)``; integration by parts makes this equal to ``F_P``."""
    T = noise.support_radius
    return _integrate(lambda w: float(noise.pdf(w) * noise.score_derivative(w)), noise, -T, T, tol)


def translation_fn(noise: NoiseModel, a: float, b: float, tol: float = 1e-10) -> float:
    """``tau(a, b) = log E_{z~P}[p(z-a) p(z-b) / p(z)^2]``."""
    if a == 0.0 or b == 0.0:
        return 0.0
    T = noise.support_radius + abs(a) + abs(b)

    def integrand(z):
        return float(np.exp(noise.logpdf(z - a) + noise.logpdf(z - b) - noise.logpdf(z)))

    val = _integrate(integrand, noise, -T, T, tol)
    if val <= 0:
        raise QuadratureError(f"translation integral is non-positive ({val!r})")
    return math.log(val)


def nongaussian_thresholds(noise: NoiseModel, lambda_star: float, fisher: float | None = None) -> tuple[float, float]:
    """``(lambda*/sqrt(F_P), 1/sqrt(F_P))``: the contiguity bound and the
    pre-transformed PCA threshold."""
    if not 0.0 < lambda_star <= 1.0:
        raise ValueError("lambda_star must lie in (0, 1]")
    fp = fisher_information(noise) if fisher is None else fisher
    root = math.sqrt(fp)
    return lambda_star / root, 1.0 / root
