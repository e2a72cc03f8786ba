"""Spike priors: sampling, overlap laws, rate functions, subgaussian constants.

A prior describes the law of the hidden unit-ish vector ``x``.  The dimension is
only supplied when sampling.  Three families are built in:

* :class:`Spherical`: uniform on the unit sphere;
* :class:`IidAtoms`: coordinates iid from a finite atom law, scaled by 1/sqrt(n);
* :class:`SparseRademacher`: coordinates 0 w.p. 1-rho, else +-1/sqrt(rho n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, xlogy

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Spherical:
    """Uniform prior on the unit sphere of R^n."""

    @property
    def descriptor(self) -> str:
        return "spherical"


@dataclass(frozen=True)
class IidAtoms:
    """Coordinates drawn iid from ``sum_i probs[i] * delta(values[i] / sqrt(n))``.

    The atom law must have mean 0 and variance 1 so that ``||x|| -> 1``.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if len(values) == 0 or len(values) != len(probs):
            raise ValueError("atoms need matching, non-empty values and probs")
        v, p = np.array(values), np.array(probs)
        if not np.all(np.isfinite(v)):
            raise ValueError("atom values must be finite")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("atom probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > _NORM_TOL:
            raise ValueError(f"atom probabilities sum to {p.sum()!r}, not 1")
        mean = float(p @ v)
        var = float(p @ v**2) - mean**2
        if abs(mean) > _NORM_TOL:
            raise ValueError(f"atom law has mean {mean:.3g}; a spike prior needs mean 0")
        if abs(var - 1.0) > _NORM_TOL:
            raise ValueError(f"atom law has variance {var:.15g}; a spike prior needs variance 1")

    @property
    def descriptor(self) -> str:
        return "atoms:" + ",".join(f"{v!r}@{p!r}" for v, p in zip(self.values, self.probs))


@dataclass(frozen=True)
class SparseRademacher:
    """Each coordinate is 0 w.p. ``1 - rho`` and ``+-1/sqrt(rho n)`` otherwise."""

    rho: float

    def __post_init__(self):
        rho = float(self.rho)
        object.__setattr__(self, "rho", rho)
        if not 0.0 < rho <= 1.0:
            raise ValueError(f"sparsity rho must lie in (0, 1], got {rho}")

    @property
    def atoms(self) -> IidAtoms:
        a = 1.0 / math.sqrt(self.rho)
        if self.rho == 1.0:
            return IidAtoms((1.0, -1.0), (0.5, 0.5))
        return IidAtoms((0.0, a, -a), (1.0 - self.rho, self.rho / 2, self.rho / 2))

    @property
    def descriptor(self) -> str:
        return "rademacher" if self.rho == 1.0 else f"sparse:{self.rho!r}"


SpikePrior = Union[Spherical, IidAtoms, SparseRademacher]


def rademacher() -> SparseRademacher:
    return SparseRademacher(1.0)


def is_rademacher(prior: SpikePrior) -> bool:
    if isinstance(prior, SparseRademacher):
        return prior.rho == 1.0
    if isinstance(prior, IidAtoms):
        pairs = sorted(zip(prior.values, prior.probs))
        return len(pairs) == 2 and pairs == [(-1.0, 0.5), (1.0, 0.5)]
    return False


def atom_law(prior: SpikePrior) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values, probs)`` of the unscaled coordinate law of an iid prior."""
    if isinstance(prior, SparseRademacher):
        prior = prior.atoms
    if not isinstance(prior, IidAtoms):
        raise TypeError(f"{type(prior).__name__} is not an iid-atom prior")
    return np.array(prior.values), np.array(prior.probs)


def parse_prior(text: str) -> SpikePrior:
    """Build a prior from ``spherical``, ``rademacher``, ``sparse:<rho>`` or
    ``atoms:v1@p1,v2@p2,...``."""
    text = text.strip()
    if text == "spherical":
        return Spherical()
    if text == "rademacher":
        return rademacher()
    kind, _, rest = text.partition(":")
    if kind == "sparse" and rest:
        return SparseRademacher(float(rest))
    if kind == "atoms" and rest:
        values, probs = [], []
        for item in rest.split(","):
            v, sep, p = item.partition("@")
            if not sep:
                raise ValueError(f"atom {item!r} must look like value@prob")
            values.append(float(v))
            probs.append(float(p))
        return IidAtoms(tuple(values), tuple(probs))
    raise ValueError(f"unrecognised prior descriptor {text!r}")


# --------------------------------------------------------------------------
# sampling


def sample_spike(prior: SpikePrior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one spike of length ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(prior, Spherical):
        g = rng.standard_normal(n)
        return g / np.linalg.norm(g)
    values, probs = atom_law(prior)
    idx = rng.choice(len(values), size=n, p=probs)
    return values[idx] / math.sqrt(n)


def overlap_samples(prior: SpikePrior, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` iid draws of ``<x, x'>`` for independent spikes ``x, x'``.

    The overlap is sampled from its exact law rather than by building vectors:
    for the sphere ``<x, x'>^2 ~ Beta(1/2, (n-1)/2)`` with a random sign, and
    for iid priors the coordinate products are multinomially counted.
    """
    if n < 1 or count < 1:
        raise ValueError("n and count must be >= 1")
    if isinstance(prior, Spherical):
        sign = rng.choice([-1.0, 1.0], size=count)
        if n == 1:
            return sign
        return sign * np.sqrt(rng.beta(0.5, (n - 1) / 2, size=count))
    values, probs = atom_law(prior)
    prods = np.outer(values, values).ravel()
    weights = np.outer(probs, probs).ravel()
    uniq, inverse = np.unique(np.round(prods, 14), return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=weights, minlength=len(uniq))
    keep = merged > 0
    uniq, merged = uniq[keep], merged[keep] / merged[keep].sum()
    if len(uniq) == 2 and np.allclose(uniq, [-uniq[1], uniq[1]]):
        # two symmetric products: a single binomial count suffices
        k = rng.binomial(n, merged[1], size=count)
        return uniq[1] * (2 * k - n) / n
    counts = rng.multinomial(n, merged, size=count)
    return counts @ uniq / n


def exact_support_overlap_samples(rho: float, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Overlaps for the sparse Rademacher variant with exactly ``round(rho n)`` nonzeros.

    This is the variant whose large-deviation rate is :func:`f_sparse`; it is
    used to validate that formula, not for simulating matrices.
    """
    k = int(round(rho * n))
    if not 1 <= k <= n:
        raise ValueError(f"rho*n = {rho * n} leaves no support")
    shared = rng.hypergeometric(k, n - k, k, size=count)
    plus = rng.binomial(shared, 0.5)
    return (2 * plus - shared) / k


# --------------------------------------------------------------------------
# rate functions


def _entropy(*ps):
    return -sum(xlogy(p, p) for p in ps)


def f_sph(t):
    """Rate function of the spherical prior, ``-log(1 - t^2) / 2``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return -0.5 * np.log1p(-t * t)


def f_rad(t):
    """Rate function of the Rademacher prior, ``log 2 - H((1 + t) / 2)``."""
    t = np.abs(np.asarray(t, dtype=float))
    t2 = t * t
    series = np.zeros_like(t2)
    for k in range(12, 0, -1):
        series = t2 * (1 / (2 * k * (2 * k - 1)) + series)
    safe = np.minimum(t, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = 0.5 * ((1 + safe) * np.log1p(safe) + xlogy(1 - safe, 1 - safe))
    # the direct form cancels to relative error ~eps/t; the series is exact to t^24
    return np.where(t < 0.1, series, direct)


def _sparse_objective(zeta, rho, t):
    ratio = np.divide(rho * t, zeta, out=np.zeros_like(zeta), where=zeta > 0)
    g = -_entropy(zeta, rho - zeta, rho - zeta, 1 - 2 * rho + zeta) + 2 * _entropy(rho, 1 - rho)
    return g + zeta * f_rad(np.minimum(ratio, 1.0))


def f_sparse(rho: float, t, grid: int = 2048, xtol: float = 1e-10):
    """Rate function of the sparse Rademacher prior with exactly ``rho n`` nonzeros.

    Minimises over the support-overlap fraction ``zeta`` on
    ``[max(rho t, 2 rho - 1), rho]`` with a dense grid, then golden-section
    refinement of the bracketing cell to width ``xtol``.
    """
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    t = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t).ravel()
    out = np.empty_like(flat)
    u = np.linspace(0.0, 1.0, grid)
    for start in range(0, flat.size, 256):
        tt = flat[start:start + 256][:, None]
        lo = np.maximum(np.maximum(rho * tt, 2 * rho - 1), 0.0)
        span = rho - lo
        z = lo + span * u[None, :]
        vals = _sparse_objective(z, rho, tt)
        k = np.argmin(vals, axis=1)
        rows = np.arange(len(k))
        a = z[rows, np.maximum(k - 1, 0)]
        b = z[rows, np.minimum(k + 1, grid - 1)]
        best = vals[rows, k]
        # golden section on the bracketing cell, all rows at once
        invphi = (math.sqrt(5) - 1) / 2
        tcol = tt[:, 0]
        while np.max(b - a) > xtol:
            c = b - invphi * (b - a)
            d = a + invphi * (b - a)
            left = _sparse_objective(c, rho, tcol) < _sparse_objective(d, rho, tcol)
            b = np.where(left, d, b)
            a = np.where(left, a, c)
        mid = 0.5 * (a + b)
        out[start:start + 256] = np.minimum(best, _sparse_objective(mid, rho, tcol))
    out[flat == 0] = 0.0
    out = np.maximum(out, 0.0)
    return out.reshape(t.shape) if t.ndim else float(out[0])


@dataclass(frozen=True)
class RateFunction:
    """A large-deviation rate function for ``|<x, x'>|`` with its metadata.

    ``curvature`` is ``lim_{t->0} f(t)/t^2``; the Wishart checker uses it where
    both sides of its inequality vanish.  ``local_chernoff`` records whether a
    non-asymptotic tail bound is known to hold near zero.
    """

    name: str
    func: Callable
    curvature: float
    local_chernoff: bool = True
    note: str = ""

    def __call__(self, t):
        return self.func(t)


def rate_for(prior_or_name) -> RateFunction:
    """Return the built-in :class:`RateFunction` for a prior (or ``"sph"``/``"rad"``)."""
    p = prior_or_name
    if isinstance(p, str):
        p = {"sph": Spherical(), "rad": rademacher()}.get(p) or parse_prior(p)
    if isinstance(p, Spherical):
        return RateFunction("spherical", f_sph, 0.5)
    if is_rademacher(p):
        return RateFunction("rademacher", f_rad, 0.5)
    if isinstance(p, SparseRademacher):
        rho = p.rho
        return RateFunction(
            f"sparse:{rho!r}",
            lambda t: f_sparse(rho, t),
            0.5,
            note="exact-support rate; transferred to the iid prior",
        )
    raise ValueError(
        f"no built-in rate function for {p!r}; use thresholds.largebeta_rate for general atoms"
    )


def rate_function(prior: SpikePrior, t):
    """Evaluate the built-in rate function of ``prior`` at ``t`` in [0, 1)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr >= 1):
        raise ValueError("rate functions are defined for t in [0, 1)")
    return rate_for(prior)(t)


# --------------------------------------------------------------------------
# subgaussian constant


def _log_mgf(values, probs, t):
    t = np.asarray(t, dtype=float)
    logp = np.log(probs, out=np.full_like(probs, -np.inf), where=probs > 0)
    return logsumexp(logp[None, :] + t[:, None] * values[None, :], axis=1)


def subgaussian_sigma_star(prior: SpikePrior, points: int = 4096) -> float:
    """Smallest ``sigma`` with ``E exp(t pi) <= exp(sigma^2 t^2 / 2)`` for all real ``t``.

    The supremum of ``2 log E exp(t pi) / t^2`` is searched on a log-spaced
    grid of ``|t|`` in ``[1e-4, 50/sqrt(rho)]`` (both signs), refined with a
    bounded Brent step around the best grid point.  The ``t -> 0`` limit is the
    variance, 1.  The spherical prior returns 1 by convention: its overlap is
    1/n-subgaussian up to normalisation, which is what the theory uses.
    """
    if isinstance(prior, Spherical):
        return 1.0
    values, probs = atom_law(prior)
    scale = 1.0 / math.sqrt(prior.rho) if isinstance(prior, SparseRademacher) else max(np.max(np.abs(values)), 1.0)
    grid = np.geomspace(1e-4, 50.0 * scale, points)

    def ratio(t):
        return 2.0 * _log_mgf(values, probs, t) / np.square(t)

    best = 1.0  # variance limit at t -> 0
    for sign in (1.0, -1.0):
        r = ratio(sign * grid)
        if not np.all(np.isfinite(r)):
            raise ValueError("moment generating function is not finite on the search grid")
        k = int(np.argmax(r))
        if r[k] > best:
            lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
            res = minimize_scalar(lambda s: -ratio(np.array([sign * s]))[0], bounds=(lo, hi),
                                  method="bounded", options={"xatol": 1e-12})
            best = max(best, float(r[k]), float(-res.fun))
    return math.sqrt(best)
