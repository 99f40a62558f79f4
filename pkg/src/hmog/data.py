"""Toy ground-truth distributions, latent sampling and seeded RNG streams.

Mixture spec files are TOML::

    # five well-separated blobs
    [[component]]
    mean = [0.0, 0.0]
    covariance = [[0.25, 0.0], [0.0, 0.25]]
    weight = 0.2

    [[component]]
    mean = [4.0, 0.0]
    covariance = [[0.25, 0.0], [0.0, 0.25]]
    weight = 0.2
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BIT_GENERATOR = "Philox"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox generator for ``seed``, split by the ``stream`` key."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=stream)))


@dataclass(frozen=True)
class Component:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float


def _is_psd(cov: np.ndarray, tol: float = 1e-12) -> bool:
    if cov.shape == (2, 2):
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        return det >= -tol and cov[0, 0] >= -tol and cov[1, 1] >= -tol
    return bool(np.linalg.eigvalsh(cov).min() >= -tol)


class GaussianMixtureSpec:
    """Ground-truth mixture of 2-D Gaussians."""

    def __init__(self, means, covariances, weights):
        means = np.asarray(means, dtype=np.float64)
        covs = np.asarray(covariances, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        k = len(means)
        if k == 0:
            raise ValueError("mixture needs at least one component")
        if means.shape != (k, 2) or covs.shape != (k, 2, 2) or weights.shape != (k,):
            raise ValueError(
                f"mixture shapes disagree: means {means.shape}, covariances {covs.shape}, weights {weights.shape}"
            )
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs)) and np.all(np.isfinite(weights))):
            raise ValueError("mixture means, covariances and weights must be finite")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {weights.tolist()}")
        for i, c in enumerate(covs):
            if not np.allclose(c, c.T, atol=1e-12):
                raise ValueError(f"covariance {i} is not symmetric")
            if not _is_psd(c):
                raise ValueError(f"covariance {i} is not positive semi-definite")
        self.means = means
        self.covariances = covs
        self.weights = weights
        self._factors = np.stack([_psd_factor(c) for c in covs])

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[Component]:
        return [Component(m, c, float(w)) for m, c, w in zip(self.means, self.covariances, self.weights)]

    @classmethod
    def default(cls) -> GaussianMixtureSpec:
        """Five equal blobs in a plus layout, each with covariance 0.25 I."""
        means = [(0.0, 0.0), (4.0, 0.0), (-4.0, 0.0), (0.0, 4.0), (0.0, -4.0)]
        return cls(means, [0.25 * np.eye(2)] * 5, [0.2] * 5)

    @classmethod
    def from_dict(cls, doc: dict) -> GaussianMixtureSpec:
        comps = doc.get("component")
        if not comps:
            raise ValueError("mixture spec needs at least one [[component]] table")
        for i, c in enumerate(comps):
            unknown = set(c) - {"mean", "covariance", "weight"}
            if unknown:
                raise ValueError(f"component[{i}]: unknown keys {sorted(unknown)}")
            missing = {"mean", "covariance", "weight"} - set(c)
            if missing:
                raise ValueError(f"component[{i}]: missing keys {sorted(missing)}")
        return cls([c["mean"] for c in comps], [c["covariance"] for c in comps], [c["weight"] for c in comps])

    @classmethod
    def load(cls, path: str | Path) -> GaussianMixtureSpec:
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return {
            "component": [
                {"mean": m.tolist(), "covariance": c.tolist(), "weight": float(w)}
                for m, c, w in zip(self.means, self.covariances, self.weights)
            ]
        }

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = cov; falls back to eigh for singular PSD."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_mixture(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) draws: component by weight, then mean + L @ standard normal."""
    if n < 1:
        raise ValueError(f"sample_mixture: n must be >= 1, got {n}")
    comp = rng.choice(len(spec.weights), size=n, p=spec.weights)
    eps = rng.standard_normal((n, 2))
    return spec.means[comp] + np.einsum("nij,nj->ni", spec._factors[comp], eps)


@dataclass(frozen=True)
class LatentSpec:
    dim: int = 2

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"latent dim must be >= 1, got {self.dim}")


def sample_latent(spec: LatentSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError(f"sample_latent: n must be >= 1, got {n}")
    return rng.standard_normal((n, spec.dim))
