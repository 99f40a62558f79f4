import numpy as np
import pytest
from scipy import stats

from hmog.data import (
    BIT_GENERATOR,
    GaussianMixtureSpec,
    LatentSpec,
    make_rng,
    sample_latent,
    sample_mixture,
)

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


def test_single_component_moments():
    spec = GaussianMixtureSpec([(2.0, 3.0)], [np.eye(2)], [1.0])
    x = sample_mixture(spec, 10_000, make_rng(7))
    assert np.all(np.abs(x.mean(axis=0) - [2.0, 3.0]) <= 0.1)
    assert np.all(np.abs(np.cov(x.T) - np.eye(2)) <= 0.1)


def test_degenerate_weights_pick_first_component():
    means = [(10.0, 0.0), (-10.0, 0.0), (0.0, 10.0), (0.0, -10.0), (0.0, 0.0)]
    spec = GaussianMixtureSpec(means, [0.01 * np.eye(2)] * 5, [1.0, 0.0, 0.0, 0.0, 0.0])
    x = sample_mixture(spec, 500, make_rng(1))
    assert np.all(np.linalg.norm(x - [10.0, 0.0], axis=1) < 1.0)


def test_single_draw_shape():
    assert sample_mixture(GaussianMixtureSpec.default(), 1, make_rng(0)).shape == (1, 2)
    assert sample_latent(LatentSpec(2), 3, make_rng(0)).shape == (3, 2)


def test_latent_moments_and_reproducibility():
    z = sample_latent(LatentSpec(2), 10_000, make_rng(3))
    assert np.all(np.abs(z.mean(axis=0)) <= 0.05)
    assert np.all(np.abs(z.var(axis=0) - 1.0) <= 0.05)
    np.testing.assert_array_equal(z, sample_latent(LatentSpec(2), 10_000, make_rng(3)))


def test_component_frequencies_pass_chi_square():
    weights = [0.1, 0.3, 0.2, 0.25, 0.15]
    means = [(20.0 * i, 0.0) for i in range(5)]
    spec = GaussianMixtureSpec(means, [np.eye(2)] * 5, weights)
    n = 100_000
    x = sample_mixture(spec, n, make_rng(11))
    comp = np.argmin(np.abs(x[:, [0]] - np.array([m[0] for m in means])[None, :]), axis=1)
    counts = np.bincount(comp, minlength=5)
    _, p = stats.chisquare(counts, n * np.array(weights))
    assert p > 0.01


def test_anisotropic_covariance_converges():
    cov = np.array([[2.0, 0.9], [0.9, 0.6]])
    spec = GaussianMixtureSpec([(0.0, 0.0)], [cov], [1.0])
    x = sample_mixture(spec, 100_000, make_rng(5))
    assert np.linalg.norm(np.cov(x.T) - cov) <= 0.05


def test_singular_psd_covariance_is_accepted():
    spec = GaussianMixtureSpec([(0.0, 0.0)], [[[1.0, 1.0], [1.0, 1.0]]], [1.0])
    x = sample_mixture(spec, 100, make_rng(0))
    np.testing.assert_allclose(x[:, 0], x[:, 1], atol=1e-12)


@pytest.mark.parametrize(
    "cov, match",
    [
        ([[1.0, 2.0], [2.0, 1.0]], "positive semi-definite"),
        ([[1.0, 0.5], [0.0, 1.0]], "symmetric"),
        ([[-1.0, 0.0], [0.0, 1.0]], "positive semi-definite"),
    ],
)
def test_invalid_covariance_rejected(cov, match):
    with pytest.raises(ValueError, match=match):
        GaussianMixtureSpec([(0.0, 0.0)], [cov], [1.0])


@pytest.mark.parametrize("weights", [[0.5, 0.6], [1.5, -0.5]])
def test_invalid_weights_rejected(weights):
    with pytest.raises(ValueError, match="weights"):
        GaussianMixtureSpec([(0, 0), (1, 1)], [np.eye(2)] * 2, weights)


def test_non_finite_entries_rejected():
    with pytest.raises(ValueError, match="finite"):
        GaussianMixtureSpec([(np.inf, 0.0)], [np.eye(2)], [1.0])


def test_non_positive_sizes_rejected():
    with pytest.raises(ValueError):
        sample_mixture(GaussianMixtureSpec.default(), 0, make_rng(0))
    with pytest.raises(ValueError):
        sample_latent(LatentSpec(2), 0, make_rng(0))
    with pytest.raises(ValueError):
        LatentSpec(0)


def test_default_layout():
    spec = GaussianMixtureSpec.default()
    assert len(spec) == 5
    assert sorted(map(tuple, spec.means.tolist())) == [(-4.0, 0.0), (0.0, -4.0), (0.0, 0.0), (0.0, 4.0), (4.0, 0.0)]
    np.testing.assert_array_equal(spec.covariances, np.stack([0.25 * np.eye(2)] * 5))
    np.testing.assert_array_equal(spec.weights, np.full(5, 0.2))


def test_toml_round_trip(tmp_path):
    spec = GaussianMixtureSpec(
        [(0.1, -2.5), (3.0, 1.0 / 3.0)], [[[0.3, 0.1], [0.1, 0.2]], np.eye(2)], [0.25, 0.75]
    )
    path = tmp_path / "mix.toml"
    path.write_text(spec.to_toml())
    back = GaussianMixtureSpec.load(path)
    np.testing.assert_array_equal(back.means, spec.means)
    np.testing.assert_array_equal(back.covariances, spec.covariances)
    np.testing.assert_array_equal(back.weights, spec.weights)
    assert tomllib.loads(spec.to_toml()) == spec.to_dict()


def test_spec_file_errors():
    with pytest.raises(ValueError, match="component"):
        GaussianMixtureSpec.from_dict({})
    with pytest.raises(ValueError, match="unknown"):
        GaussianMixtureSpec.from_dict({"component": [{"mean": [0, 0], "covariance": [[1, 0], [0, 1]], "weight": 1, "w": 2}]})
    with pytest.raises(ValueError, match="missing"):
        GaussianMixtureSpec.from_dict({"component": [{"mean": [0, 0], "weight": 1}]})


def test_streams_are_independent_and_reproducible():
    a = make_rng(42, 0).standard_normal(5)
    assert not np.array_equal(a, make_rng(42, 1).standard_normal(5))
    np.testing.assert_array_equal(a, make_rng(42, 0).standard_normal(5))
    assert type(make_rng(0).bit_generator).__name__ == BIT_GENERATOR
