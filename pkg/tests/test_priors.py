import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb, xlogy
from scipy.stats import binom, hypergeom

from spikedlab.priors import (
    IidAtoms,
    SparseRademacher,
    Spherical,
    atom_law,
    exact_support_overlap_samples,
    f_rad,
    f_sparse,
    f_sph,
    is_rademacher,
    overlap_samples,
    parse_prior,
    rademacher,
    rate_for,
    rate_function,
    sample_spike,
    subgaussian_sigma_star,
)
from spikedlab.rng import derive

BUILTIN = [Spherical(), rademacher(), SparseRademacher(0.03), SparseRademacher(0.2), SparseRademacher(0.5)]


class TestConstruction:
    def test_sparse_one_is_rademacher(self):
        assert is_rademacher(SparseRademacher(1.0))
        assert is_rademacher(IidAtoms((1, -1), (0.5, 0.5)))
        assert not is_rademacher(SparseRademacher(0.5))

    def test_atoms_validated(self):
        with pytest.raises(ValueError, match="sum"):
            IidAtoms((1, -1), (0.5, 0.6))
        with pytest.raises(ValueError, match="mean"):
            IidAtoms((1, -0.5), (0.5, 0.5))
        with pytest.raises(ValueError, match="variance"):
            IidAtoms((2, -2), (0.5, 0.5))

    def test_sparse_rho_range(self):
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                SparseRademacher(bad)

    @pytest.mark.parametrize("text", ["spherical", "rademacher", "sparse:0.25", "atoms:-1@0.5,1@0.5"])
    def test_descriptor_round_trip(self, text):
        prior = parse_prior(text)
        assert parse_prior(prior.descriptor) == prior

    def test_bad_descriptor(self):
        for bad in ("gauss", "sparse:", "atoms:1", "atoms:1@1"):
            with pytest.raises(ValueError):
                parse_prior(bad)

    def test_sparse_atoms_unit_variance(self):
        v, p = atom_law(SparseRademacher(0.3))
        assert abs(p @ v) < 1e-15
        np.testing.assert_allclose(p @ v**2, 1.0, atol=1e-12)


class TestSampleSpike:
    def test_spherical_unit_norm(self, gen):
        x = sample_spike(Spherical(), 5, gen)
        assert abs(np.linalg.norm(x) - 1) < 1e-12

    def test_rademacher_entries(self, gen):
        x = sample_spike(rademacher(), 4, gen)
        assert set(np.abs(x)) == {0.5}

    def test_sparse_zero_fraction(self, gen):
        x = sample_spike(SparseRademacher(0.5), 10**6, gen)
        assert abs(np.mean(x == 0) - 0.5) < 0.01
        nz = np.abs(x[x != 0])
        np.testing.assert_allclose(nz, 1 / math.sqrt(0.5 * 10**6))

    def test_deterministic(self):
        a = sample_spike(SparseRademacher(0.2), 50, derive(3))
        b = sample_spike(SparseRademacher(0.2), 50, derive(3))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("prior", [Spherical(), rademacher(), SparseRademacher(0.5)])
    def test_norm_concentration(self, prior):
        n = 10**4
        dev = [abs(float(sample_spike(prior, n, derive(11, s)) @ sample_spike(prior, n, derive(11, s))) - 1)
               for s in range(1000)]
        assert np.mean(np.array(dev) < 0.05) >= 0.99

    def test_norm_concentration_sparse_needs_larger_n(self):
        # ||x||^2 has sd sqrt((1-rho)/(rho n)); at rho = 0.2, n = 1e4 the 0.05 band is only 2.5 sd wide
        sd = math.sqrt(0.8 / (0.2 * 10**4))
        assert 0.05 / sd < 2.58


class TestOverlapSamples:
    def test_spherical_mean_zero(self, gen):
        ov = overlap_samples(Spherical(), 2, 200_000, gen)
        se = ov.std() / math.sqrt(ov.size)
        assert abs(ov.mean()) < 3 * se

    def test_rademacher_single_coordinate(self, gen):
        ov = overlap_samples(rademacher(), 1, 1000, gen)
        assert set(np.unique(ov)) <= {-1.0, 1.0}

    def test_rademacher_clt_variance(self, gen):
        ov = overlap_samples(rademacher(), 100, 10**5, gen)
        assert abs(np.var(math.sqrt(100) * ov) - 1) < 0.05

    @pytest.mark.parametrize("prior", [Spherical(), SparseRademacher(0.3), IidAtoms((-2, 0.5), (0.2, 0.8))])
    def test_matches_vector_construction(self, prior):
        # oracle: build the two spikes explicitly and take the inner product
        n, count = 20, 20_000
        g = derive(77)
        direct = np.array([sample_spike(prior, n, g) @ sample_spike(prior, n, g) for _ in range(count)])
        fast = overlap_samples(prior, n, count, derive(78))
        for k in (2, 4):
            a, b = np.mean(direct**k), np.mean(fast**k)
            se = math.hypot(np.std(direct**k), np.std(fast**k)) / math.sqrt(count)
            assert abs(a - b) < 4 * se

    def test_exact_support_law(self, gen):
        ov = exact_support_overlap_samples(0.1, 50, 100_000, gen)
        # k = 5 nonzeros each: overlaps are multiples of 1/5 and E[ov^2] = 1/n
        np.testing.assert_allclose(np.round(ov * 5), ov * 5, atol=1e-12)
        assert abs(np.mean(ov**2) * 50 - 1) < 0.03


def _rad_tail_exact(n, t):
    """Pr[|<x,x'>| >= t] for Rademacher: n<x,x'> = 2B - n with B ~ Bin(n, 1/2)."""
    k = np.arange(n + 1)
    ov = (2 * k - n) / n
    return float(np.sum(binom.pmf(k, n, 0.5)[np.abs(ov) >= t - 1e-12]))


def _sparse_tail_exact(rho, n, t):
    k = int(round(rho * n))
    total = 0.0
    for s in range(k + 1):
        ps = hypergeom.pmf(s, n, k, k)
        j = np.arange(s + 1)
        ov = (2 * j - s) / k
        total += ps * float(np.sum(binom.pmf(j, s, 0.5)[np.abs(ov) >= t - 1e-12]))
    return total


class TestRateFunctions:
    @pytest.mark.parametrize("prior", BUILTIN)
    def test_zero_at_origin(self, prior):
        assert rate_function(prior, 0.0) == 0.0

    @pytest.mark.parametrize("prior", BUILTIN)
    def test_non_decreasing(self, prior):
        t = np.linspace(0, 0.999, 1000)
        f = rate_function(prior, t)
        assert np.all(np.diff(f) >= -1e-12)

    def test_rademacher_limit(self):
        np.testing.assert_allclose(f_rad(1 - 1e-12), math.log(2), atol=1e-9)

    def test_spherical_value(self):
        np.testing.assert_allclose(f_sph(0.6), 0.22314355131420976, rtol=1e-12)

    def test_rademacher_entropy_form(self):
        t = np.linspace(0.01, 0.99, 99)
        q = (1 + t) / 2
        h = -(xlogy(q, q) + xlogy(1 - q, 1 - q))
        np.testing.assert_allclose(f_rad(t), math.log(2) - h, rtol=1e-12)

    def test_rademacher_small_t_series(self):
        t = np.geomspace(1e-8, 1e-1, 80)
        np.testing.assert_allclose(f_rad(t), t**2 / 2 + t**4 / 12 + t**6 / 30 + t**8 / 56 + t**10 / 90 + t**12 / 132 + t**14 / 182, rtol=1e-13)

    def test_spherical_dominates_rademacher(self):
        t = np.linspace(0, 0.999, 1000)
        assert np.all(f_sph(t) >= f_rad(t) - 1e-15)

    def test_rejects_t_at_one(self):
        with pytest.raises(ValueError):
            rate_function(rademacher(), 1.0)

    def test_rademacher_tail_envelope_n30(self):
        for t in (0.2, 0.4, 0.6):
            emp = -math.log(_rad_tail_exact(30, t)) / 30
            assert emp >= f_rad(t) - 0.15

    def test_sparse_at_rho_one_is_rademacher(self):
        t = np.linspace(0.05, 0.95, 19)
        np.testing.assert_allclose(f_sparse(1.0, t), f_rad(t), atol=1e-12)

    @pytest.mark.parametrize("rho,t", [(0.03, 0.5), (0.2, 0.3), (0.4, 0.8), (0.6, 0.2)])
    def test_sparse_brute_force(self, rho, t):
        # oracle: the same objective on a 2e5-point zeta grid over the corrected interval
        lo = max(rho * t, 2 * rho - 1, 0)
        z = np.linspace(lo, rho, 200_001)[1:]

        def H(*ps):
            return -sum(xlogy(p, p) for p in ps)

        inner = np.minimum(rho * t / z, 1.0)
        obj = -H(z, rho - z, rho - z, 1 - 2 * rho + z) + 2 * H(rho, 1 - rho) + z * f_rad(inner)
        np.testing.assert_allclose(f_sparse(rho, t), obj.min(), rtol=1e-7, atol=1e-12)

    def test_sparse_tail_oracle_exact(self):
        emp = -math.log(_sparse_tail_exact(0.03, 200, 0.5)) / 200
        val = f_sparse(0.03, 0.5)
        assert abs(val - emp) / emp < 0.15

    def test_sparse_tail_oracle_monte_carlo(self):
        ov = exact_support_overlap_samples(0.03, 200, 10**7, derive(31))
        p = np.mean(np.abs(ov) >= 0.5 - 1e-12)
        emp = -math.log(p) / 200
        assert abs(f_sparse(0.03, 0.5) - emp) / emp < 0.15

    def test_rate_metadata(self):
        assert rate_for("sph").curvature == 0.5
        assert "transfer" in rate_for(SparseRademacher(0.03)).note
        with pytest.raises(ValueError, match="largebeta"):
            rate_for(IidAtoms((-2, 0.5), (0.2, 0.8)))

    @given(st.floats(0.0, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_rademacher_bounded_by_log2(self, t):
        v = float(f_rad(t))
        assert 0 <= v <= math.log(2) + 1e-15

    @given(st.floats(0.02, 1.0), st.floats(0.0, 0.99))
    @settings(max_examples=40, deadline=None)
    def test_sparse_curvature_envelope(self, rho, t):
        # the sparse rate never exceeds its value with the support overlap pinned at rho^2
        v = f_sparse(rho, t)
        assert v >= 0
        assert v <= f_sparse(rho, 0.99) + 1e-12


def _sigma_star_oracle(rho):
    t = np.linspace(1e-3, 60 / math.sqrt(rho), 400_001)
    a = 1 / math.sqrt(rho)
    log_mgf = np.logaddexp(math.log(1 - rho) if rho < 1 else -np.inf,
                           math.log(rho) + np.logaddexp(t * a, -t * a) - math.log(2))
    return math.sqrt(max(1.0, float(np.max(2 * log_mgf / t**2))))


class TestSigmaStar:
    def test_rademacher(self):
        assert abs(subgaussian_sigma_star(rademacher()) - 1) < 1e-6

    @pytest.mark.parametrize("rho", [1 / 3, 0.5, 0.75, 1.0])
    def test_unit_above_one_third(self, rho):
        assert abs(subgaussian_sigma_star(SparseRademacher(rho)) - 1) < 1e-4

    def test_above_one_below_third(self):
        assert subgaussian_sigma_star(SparseRademacher(0.2)) > 1

    @pytest.mark.parametrize("rho", [0.05, 0.1, 0.2, 0.3])
    def test_dense_grid_oracle(self, rho):
        np.testing.assert_allclose(subgaussian_sigma_star(SparseRademacher(rho)), _sigma_star_oracle(rho), rtol=1e-6)

    def test_non_increasing(self):
        rhos = np.linspace(0.05, 1, 40)
        s = [subgaussian_sigma_star(SparseRademacher(r)) for r in rhos]
        assert np.all(np.diff(s) <= 1e-6)

    def test_spherical_convention(self):
        assert subgaussian_sigma_star(Spherical()) == 1.0
