"""Post-hoc analysis of a trained tree: how leaves co-activate, what each
node produces on average, and which latents each leaf owns most."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .generators import GeneratorTree, SharedBlock, leaf_responsibilities, node_weights, tree_forward


def correlation_matrix(resp: np.ndarray) -> np.ndarray:
    """Pearson correlation between columns; constant columns get 0 off-diagonal."""
    resp = np.asarray(resp, dtype=np.float64)
    if resp.ndim != 2 or resp.shape[0] < 3:
        raise ValueError(f"correlation needs an (n >= 3, K) matrix, got {resp.shape}")
    centred = resp - resp.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", centred, centred))
    # the mean of a constant column can round away from its value, so test
    # constancy on the raw data rather than on the centred norm
    live = (np.ptp(resp, axis=0) > 0.0) & (norms > 0.0)
    unit = np.zeros_like(centred)
    unit[:, live] = centred[:, live] / norms[live]
    corr = np.clip(unit.T @ unit, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def gating_correlation(tree: GeneratorTree, z) -> np.ndarray:
    """(K, K) correlation of leaf responsibilities across the latent batch."""
    with ad.no_grad():
        resp = leaf_responsibilities(tree, Tensor(z)).data
    return correlation_matrix(resp)


def _samples(tree: GeneratorTree, shared: SharedBlock, z: Tensor) -> np.ndarray:
    with ad.no_grad():
        return shared(tree_forward(tree, z)).data


def node_average_response(tree: GeneratorTree, shared: SharedBlock, z) -> list[np.ndarray | None]:
    """Weighted mean sample per node, heap order; None marks an unused node.

    Node weights are products of the gatings from the root down to the node,
    so the root gives the plain sample mean and leaves use their
    responsibilities.
    """
    z = Tensor(z)
    if z.shape[0] < 1:
        raise ValueError("node_average_response needs at least one latent")
    x = _samples(tree, shared, z)
    w = node_weights(tree, z)
    out: list[np.ndarray | None] = []
    for m in range(w.shape[1]):
        total = w[:, m].sum()
        out.append(None if total < 1e-12 else (w[:, m] @ x) / total)
    return out


def top_leaf_exemplars(
    tree: GeneratorTree,
    shared: SharedBlock,
    n_draw: int,
    top: int,
    rng: np.random.Generator,
) -> list[dict]:
    """For every leaf, the ``top`` of ``n_draw`` random latents it is most
    responsible for (ties: lower draw index), with their generated samples.
    """
    if top < 1 or n_draw < top:
        raise ValueError(f"need 1 <= top <= n_draw, got top={top}, n_draw={n_draw}")
    z = rng.standard_normal((n_draw, tree.latent_dim))
    zt = Tensor(z)
    with ad.no_grad():
        resp = leaf_responsibilities(tree, zt).data
    x = _samples(tree, shared, zt)
    result = []
    for leaf in range(resp.shape[1]):
        idx = np.argsort(-resp[:, leaf], kind="stable")[:top]
        result.append({"index": idx, "z": z[idx], "samples": x[idx], "responsibility": resp[idx, leaf]})
    return result
