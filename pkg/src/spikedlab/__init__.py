"""Numerical laboratory for spiked Wigner and Wishart random matrix models."""

__version__ = "0.1.0"

from spikedlab.priors import (
    IidAtoms,
    SparseRademacher,
    Spherical,
    parse_prior,
    rademacher,
    rate_function,
    sample_spike,
    subgaussian_sigma_star,
)
from spikedlab.noise import (
    NoiseModel,
    PointMassNoise,
    bimodal,
    fisher_information,
    parse_noise,
    standard_gaussian,
    translation_fn,
)
from spikedlab.ensembles import (
    SymmetricMatrixSample,
    WishartFailure,
    sample_gwig,
    sample_wig,
    sample_wishart,
)

__all__ = [
    "IidAtoms",
    "NoiseModel",
    "PointMassNoise",
    "SparseRademacher",
    "Spherical",
    "SymmetricMatrixSample",
    "WishartFailure",
    "bimodal",
    "fisher_information",
    "parse_noise",
    "parse_prior",
    "rademacher",
    "rate_function",
    "sample_gwig",
    "sample_spike",
    "sample_wig",
    "sample_wishart",
    "standard_gaussian",
    "subgaussian_sigma_star",
    "translation_fn",
]
