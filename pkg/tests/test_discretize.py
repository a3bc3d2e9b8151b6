import numpy as np
import pytest
from scipy import stats

from bitsback import codecs, models, vrans
from bitsback.discretize import (bucket_index, dynamic_grid, grid_for, logistic_cdf,
                                 std_normal_cdf, std_normal_quantile)


def test_cdf_values():
    assert std_normal_cdf(0.0) == 0.5
    assert abs(std_normal_cdf(0.6745) - 0.75) < 1e-4
    z = np.linspace(-9, 9, 2001)
    assert np.max(np.abs(std_normal_cdf(z) - stats.norm.cdf(z))) < 1e-7
    assert np.max(np.abs(std_normal_cdf(-z) - (1 - std_normal_cdf(z)))) < 1e-12
    assert np.all(np.diff(std_normal_cdf(z)) >= 0)


def test_quantile_values():
    assert std_normal_quantile(0.5) == 0.0
    assert abs(std_normal_quantile(0.25) + 0.67449) < 1e-5
    assert abs(std_normal_quantile(0.125) + 1.15035) < 1e-5
    p = np.concatenate([np.logspace(-12, -1, 50), np.linspace(0.1, 0.9, 81), 1 - np.logspace(-9, -1, 50)])
    assert np.max(np.abs(std_normal_cdf(std_normal_quantile(p)) - p)) < 1e-9
    assert np.allclose(std_normal_quantile(1 - p), -std_normal_quantile(p))
    for bad in [0.0, 1.0, -0.1]:
        with pytest.raises(ValueError):
            std_normal_quantile(bad)


def test_logistic_cdf():
    assert logistic_cdf(0.0) == 0.5
    assert abs(logistic_cdf(2.0) - 1 / (1 + np.exp(-2))) < 1e-15


def test_grid_examples():
    g = grid_for(0.0, 1.0, 2)
    assert np.allclose(g.boundaries(), [-0.67449, 0, 0.67449], atol=1e-5)
    assert np.allclose(g.centres(), [-1.15035, -0.31864, 0.31864, 1.15035], atol=1e-5)
    one = grid_for(0.7, 2.0, 0)
    assert one.n == 1 and one.centre(0) == 0.7
    a = grid_for(1.5, 3.0, 5)
    b = grid_for(0.0, 1.0, 5)
    assert np.allclose(a.centres(), 1.5 + 3.0 * b.centres())
    assert np.allclose(a.boundaries(), 1.5 + 3.0 * b.boundaries())


def test_grid_validation():
    with pytest.raises(ValueError):
        grid_for(0.0, 1.0, 25)
    with pytest.raises(ValueError):
        grid_for(0.0, 0.0, 4)


def test_equal_mass_buckets():
    for r_q in [1, 3, 8]:
        g = grid_for(0.3, 2.0, r_q)
        edges = np.concatenate([[-np.inf], g.boundaries(), [np.inf]])
        mass = np.diff(stats.norm.cdf(edges, 0.3, 2.0))
        assert np.allclose(mass, 2.0 ** -r_q, atol=1e-9)


def test_bucket_index_examples():
    g = grid_for(0.0, 1.0, 2)
    assert bucket_index(g, 0.1) == 2
    assert bucket_index(g, 0.0) == 2  # ties go up
    assert bucket_index(g, -1e300) == 0
    assert bucket_index(g, 1e300) == 3


@pytest.mark.parametrize("r_q", range(1, 13))
def test_centre_index_consistency_exhaustive(r_q):
    g = grid_for(0.0, 1.0, r_q)
    b = np.arange(g.n)
    assert np.array_equal(bucket_index(g, g.centre(b)), b)


def test_centre_index_consistency_sampled_16():
    g = grid_for(-0.4, 1.7, 16)
    b = np.random.default_rng(0).integers(0, g.n, 5000)
    assert np.array_equal(bucket_index(g, g.centre(b)), b)
    z = np.random.default_rng(1).normal(-0.4, 1.7, 5000)
    i = bucket_index(g, z)
    assert np.all((g.boundary(i) <= z) & (z < g.boundary(i + 1)))


def test_dynamic_grid_top_and_shift():
    m = models.HierarchicalGaussianModel.random([3, 2], 4, seed=0)
    top = dynamic_grid(2, [], m, 6)
    ref = grid_for(np.zeros(2), np.ones(2), 6)
    assert np.allclose(top.centres(), ref.centres())
    z2 = np.array([0.5, -1.0])
    g0 = dynamic_grid(1, [np.zeros(2)], m, 6)
    g1 = dynamic_grid(1, [z2], m, 6)
    assert np.allclose(g1.loc - g0.loc, m.A[(1, 2)] @ z2)
    assert np.allclose(g1.scale, g0.scale)


def test_uniform_index_prior_costs_r_q():
    c = codecs.uniform_codec(12, n=3)
    m = vrans.vinit(1)
    m = c.push(m, [5, 4000, 17])
    assert abs(vrans.effective_length(m) - 32 - 36) < 1e-9
