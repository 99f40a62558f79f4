"""Sample-quality metrics: Frechet distance between Gaussian fits, k-NN
leave-one-out two-sample accuracy, mode coverage, and latent truncation.

The Frechet distance here is computed on raw data coordinates, not on
Inception features, so its values are not comparable to published FID
scores.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import GaussianMixtureSpec


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(samples) -> GaussianFit:
    """Sample mean and unbiased (n - 1) covariance, symmetrised."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"fit_gaussian: expected (n, d) samples, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"fit_gaussian: need at least 2 samples, got {x.shape[0]}")
    mu = x.mean(axis=0)
    centred = x - mu
    cov = centred.T @ centred / (x.shape[0] - 1)
    return GaussianFit(mu, 0.5 * (cov + cov.T))


def _sym_sqrt_eigh(c: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (c + c.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def denman_beavers_sqrt(c: np.ndarray, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray | None:
    """Principal square root by Denman-Beavers iteration; None if it fails."""
    y = np.array(c, dtype=np.float64)
    z = np.eye(c.shape[0])
    for _ in range(max_iter):
        try:
            y_inv = np.linalg.inv(y)
            z_inv = np.linalg.inv(z)
        except np.linalg.LinAlgError:
            return None
        y_next = 0.5 * (y + z_inv)
        z = 0.5 * (z + y_inv)
        delta = np.linalg.norm(y_next - y)
        y = y_next
        if not np.all(np.isfinite(y)):
            return None
        if delta <= tol * max(1.0, np.linalg.norm(y)):
            return y
    return None


def trace_sqrt_product(s1: np.ndarray, s2: np.ndarray) -> float:
    """Tr((s1 s2)^(1/2)) for symmetric PSD s1, s2."""
    d = s1.shape[0]
    if d == 1:
        return math.sqrt(max(float(s1[0, 0] * s2[0, 0]), 0.0))
    if d == 2:
        # eigenvalues l1, l2 >= 0: (sqrt l1 + sqrt l2)^2 = tr + 2 sqrt(det)
        tr = float(np.sum(s1 * s2.T))
        det = float(np.linalg.det(s1) * np.linalg.det(s2))
        return math.sqrt(max(tr + 2.0 * math.sqrt(max(det, 0.0)), 0.0))
    a = _sym_sqrt_eigh(s1)
    inner = a @ s2 @ a
    inner = 0.5 * (inner + inner.T)
    root = denman_beavers_sqrt(inner)
    if root is None:
        root = _sym_sqrt_eigh(inner)
    return float(np.trace(root))


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """Squared Frechet distance ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2))."""
    if a.mean.shape != b.mean.shape or a.covariance.shape != b.covariance.shape:
        raise ValueError(f"frechet_distance: dimension mismatch {a.mean.shape} vs {b.mean.shape}")
    diff = a.mean - b.mean
    value = float(diff @ diff) + float(
        np.trace(a.covariance) + np.trace(b.covariance)
    ) - 2.0 * trace_sqrt_product(a.covariance, b.covariance)
    if value < -1e-8:
        raise ValueError(f"frechet_distance: negative value {value:.3e}; covariances are not PSD")
    return max(value, 0.0)


def knn_two_sample(real, fake, k: int = 5, chunk: int = 256) -> tuple[float, float, float]:
    """Leave-one-out k-NN accuracy on the pooled real + fake set.

    Returns (real accuracy, fake accuracy, overall accuracy).  Distance ties
    go to the lower pooled index (reals come first); vote ties go to "real".
    """
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    n, m = len(real), len(fake)
    if k < 1:
        raise ValueError(f"knn_two_sample: k must be >= 1, got {k}")
    if k >= n + m:
        raise ValueError(f"knn_two_sample: k={k} needs more than {n + m} pooled points")
    x = np.concatenate([real, fake], axis=0)
    is_fake = np.concatenate([np.zeros(n, dtype=np.int64), np.ones(m, dtype=np.int64)])
    pred_fake = np.empty(n + m, dtype=bool)
    for lo in range(0, n + m, chunk):
        hi = min(lo + chunk, n + m)
        d = ((x[lo:hi, None, :] - x[None, :, :]) ** 2).sum(axis=-1)
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        nearest = np.argsort(d, axis=1, kind="stable")[:, :k]
        pred_fake[lo:hi] = 2 * is_fake[nearest].sum(axis=1) > k
    real_acc = float(np.mean(~pred_fake[:n])) if n else 0.0
    fake_acc = float(np.mean(pred_fake[n:])) if m else 0.0
    overall = float(np.mean(pred_fake == is_fake.astype(bool)))
    return real_acc, fake_acc, overall


def mode_coverage(
    fake,
    spec: GaussianMixtureSpec,
    radius_sigmas: float = 3.0,
    min_share: float = 0.02,
) -> tuple[int, np.ndarray]:
    """Count mixture components that received a fair share of nearby fakes.

    Each fake goes to its nearest component mean; a component is covered if
    at least ``min_share * n`` of its fakes lie within ``radius_sigmas``
    standard deviations (largest axis) of the mean.  Returns the count and
    the per-component histogram of those nearby fakes.
    """
    if radius_sigmas <= 0:
        raise ValueError("radius_sigmas must be positive")
    if not 0.0 < min_share < 1.0:
        raise ValueError("min_share must lie in (0, 1)")
    fake = np.asarray(fake, dtype=np.float64).reshape(-1, spec.means.shape[1])
    hist = np.zeros(len(spec), dtype=np.int64)
    n = len(fake)
    if n == 0:
        return 0, hist
    dist = np.sqrt(((fake[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=-1))
    nearest = np.argmin(dist, axis=1)
    radii = radius_sigmas * np.sqrt(np.linalg.eigvalsh(spec.covariances).max(axis=1))
    inside = dist[np.arange(n), nearest] <= radii[nearest]
    np.add.at(hist, nearest[inside], 1)
    return int(np.sum(hist >= min_share * n)), hist


def truncate_latents(z, drop_fraction: float) -> np.ndarray:
    """Drop the ``floor(drop_fraction * n)`` least likely rows (largest norm)."""
    if not 0.0 <= drop_fraction < 1.0:
        raise ValueError(f"drop_fraction must lie in [0, 1), got {drop_fraction}")
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    n_drop = int(math.floor(drop_fraction * n + 1e-9))
    if n_drop == 0:
        return z.copy()
    order = np.argsort(np.einsum("ij,ij->i", z, z), kind="stable")
    keep = np.sort(order[: n - n_drop])
    return z[keep]


@dataclass
class MetricReport:
    frechet: float
    knn_real_acc: float
    knn_fake_acc: float
    knn_overall: float
    modes_covered: int
    samples_per_mode: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_samples(
    real,
    fake,
    spec: GaussianMixtureSpec,
    k: int = 5,
    radius_sigmas: float = 3.0,
    min_share: float = 0.02,
) -> MetricReport:
    fd = frechet_distance(fit_gaussian(real), fit_gaussian(fake))
    r_acc, f_acc, overall = knn_two_sample(real, fake, k)
    covered, hist = mode_coverage(fake, spec, radius_sigmas, min_share)
    return MetricReport(fd, r_acc, f_acc, overall, covered, hist.tolist())
