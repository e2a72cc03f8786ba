"""Samplers for the spiked Wigner and Wishart ensembles.

Wigner samples keep the generated ``sqrt(n)*Y`` matrix alongside ``Y`` so the
point-mass detector can compare entries bit-for-bit on the scale where they
were drawn.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from spikedlab.noise import standard_gaussian
from spikedlab.priors import sample_spike

MAGIC = b"SPKM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIqI")  # magic, version, n, seed (-1 = none), descriptor bytes


@dataclass
class SymmetricMatrixSample:
    """A symmetric ``n x n`` matrix with the parameters that produced it.

    ``model`` is a flat JSON-friendly dict (``kind`` plus parameters).  ``raw``
    holds ``sqrt(n)*Y`` exactly as generated for Wigner models; ``samples`` is
    the ``n x N`` data matrix for Wishart models when it was kept.
    """

    n: int
    entries: np.ndarray
    model: dict
    seed: int | None = None
    spike: np.ndarray | None = None
    samples: np.ndarray | None = None
    raw: np.ndarray | None = field(default=None, repr=False)

    @property
    def kind(self) -> str:
        return self.model["kind"]

    @property
    def is_spiked(self) -> bool:
        return self.spike is not None

    @property
    def gamma(self) -> float:
        """Actual aspect ratio ``n/N`` of a Wishart sample."""
        return self.model["gamma_actual"]

    def scaled(self) -> np.ndarray:
        """``sqrt(n) * Y``; the generated matrix when it was kept."""
        if self.raw is not None:
            return self.raw
        return math.sqrt(self.n) * self.entries

    def descriptor(self) -> str:
        return json.dumps(self.model, sort_keys=True)


@dataclass(frozen=True)
class WishartFailure:
    """The failure outcome: the drawn spike makes ``I + beta*x*x^T`` indefinite."""

    beta: float
    norm_sq: float
    model: dict
    seed: int | None = None

    @property
    def reason(self) -> str:
        return f"|beta| * ||x||^2 = {abs(self.beta) * self.norm_sq:.6g} > 1"


# --------------------------------------------------------------------------
# Wigner


def _symmetric_noise(noise, n: int, rng: np.random.Generator) -> np.ndarray:
    iu = np.triu_indices(n, 1)
    W = np.zeros((n, n))
    W[iu] = noise.sample(rng, iu[0].size)
    W.T[iu] = W[iu]
    W[np.diag_indices(n)] = noise.sample_diagonal(rng, n)
    return W


def _wigner(kind, lam, noise, prior, n, rng, seed):
    if n < 2:
        raise ValueError("Wigner samples need n >= 2")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    spike = sample_spike(prior, n, rng) if lam > 0 else None
    raw = _symmetric_noise(noise, n, rng)
    if spike is not None:
        raw += (lam * math.sqrt(n)) * np.outer(spike, spike)
    model = {"kind": kind, "lambda": float(lam), "prior": prior.descriptor, "noise": noise.descriptor}
    return SymmetricMatrixSample(n, raw / math.sqrt(n), model, seed, spike, raw=raw)


def sample_gwig(lam: float, prior, n: int, rng: np.random.Generator, seed: int | None = None) -> SymmetricMatrixSample:
    """``Y = lam*x*x^T + W/sqrt(n)`` with ``W`` from the GOE."""
    return _wigner("gwig", lam, standard_gaussian(), prior, n, rng, seed)


def sample_wig(lam: float, noise, prior, n: int, rng: np.random.Generator, seed: int | None = None) -> SymmetricMatrixSample:
    """Spiked Wigner matrix with off-diagonal noise from ``noise``."""
    return _wigner("wig", lam, noise, prior, n, rng, seed)


# --------------------------------------------------------------------------
# Wishart


def sample_count(n: int, gamma: float) -> int:
    """``N = round(n/gamma)`` with ties rounded up."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return int(math.floor(n / gamma + 0.5))


def sample_wishart(
    gamma: float,
    beta: float,
    prior,
    n: int,
    rng: np.random.Generator,
    keep_samples: bool = False,
    seed: int | None = None,
    spike: np.ndarray | None = None,
):
    """Sample ``Y = X X^T / N`` with columns ``N(0, I + beta x x^T)``.

    Returns :class:`WishartFailure` when ``beta < 0`` and ``|beta|*||x||^2 > 1``.
    ``beta == 0`` gives the unspiked model and draws no spike.  A fixed
    ``spike`` may be supplied instead of drawing one from the prior.
    """
    if n < 2:
        raise ValueError("Wishart samples need n >= 2")
    if beta < -1:
        raise ValueError("beta must be >= -1")
    N = sample_count(n, gamma)
    if N < 2:
        raise ValueError(f"N = round(n/gamma) = {N} is below 2")
    model = {
        "kind": "wish",
        "beta": float(beta),
        "gamma": float(gamma),
        "gamma_actual": n / N,
        "N": N,
        "prior": prior.descriptor,
    }
    x = None
    if beta != 0:
        x = sample_spike(prior, n, rng) if spike is None else np.asarray(spike, dtype=float)
    G = rng.standard_normal((n, N))
    if x is not None:
        nsq = float(x @ x)
        # 1e-12 absorbs rounding in ||x||^2 = 1 exactly for unit-norm priors
        if beta < 0 and abs(beta) * nsq > 1 + 1e-12:
            return WishartFailure(float(beta), nsq, model, seed)
        if nsq > 0:
            coef = math.sqrt(max(1 + beta * nsq, 0.0)) - 1
            G += np.outer(x, (coef / nsq) * (x @ G))
    Y = (G @ G.T) / N
    Y = np.triu(Y) + np.triu(Y, 1).T
    return SymmetricMatrixSample(n, Y, model, seed, x, samples=G if keep_samples else None)


# --------------------------------------------------------------------------
# serialization


def to_bytes(sample: SymmetricMatrixSample) -> bytes:
    """Binary container: header, JSON model descriptor, row-major upper triangle."""
    desc = sample.descriptor().encode()
    seed = -1 if sample.seed is None else int(sample.seed)
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, sample.n, seed, len(desc))
    tri = sample.entries[np.triu_indices(sample.n)].astype("<f8")
    return head + desc + tri.tobytes()


def from_bytes(blob: bytes) -> SymmetricMatrixSample:
    magic, version, n, seed, dlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a spiked-matrix container (bad magic)")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = _HEADER.size
    model = json.loads(blob[off : off + dlen].decode())
    tri = np.frombuffer(blob, dtype="<f8", offset=off + dlen)
    if tri.size != n * (n + 1) // 2:
        raise ValueError("payload length does not match n")
    Y = np.zeros((n, n))
    Y[np.triu_indices(n)] = tri
    Y = Y + np.triu(Y, 1).T
    return SymmetricMatrixSample(n, Y, model, None if seed < 0 else seed)


def to_csv(sample: SymmetricMatrixSample, max_n: int = 500) -> str:
    """Full matrix as CSV, preceded by a ``#`` line holding the descriptor."""
    if sample.n > max_n:
        raise ValueError(f"CSV export is limited to n <= {max_n}; use the binary container")
    buf = io.StringIO()
    buf.write("# " + sample.descriptor() + f" seed={sample.seed}\n")
    np.savetxt(buf, sample.entries, delimiter=",", fmt="%.17g")
    return buf.getvalue()
