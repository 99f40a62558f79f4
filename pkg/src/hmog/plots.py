"""Hand-written SVG plots: sample scatter, leaf correlation heatmap, tree layout.

Output is plain text built from fixed-precision numbers, so identical
inputs give identical files.
"""

from __future__ import annotations

import colorsys
from html import escape
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import make_rng
from .generators import HMoGGenerator
from .interpret import correlation_matrix, gating_correlation, node_average_response, top_leaf_exemplars
from .training import STREAM_EVAL

EXEMPLAR_DRAWS = 10000
EXEMPLAR_TOP = 5


def palette(k: int) -> list[str]:
    """``k`` distinct colours spaced evenly in hue."""
    out = []
    for i in range(k):
        r, g, b = colorsys.hls_to_rgb(i / max(k, 1), 0.45, 0.7)
        out.append(f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}")
    return out


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def scatter_svg(real: np.ndarray, fake: np.ndarray, labels: np.ndarray, k: int, size: int = 480) -> str:
    """Real points as grey crosses, fakes as dots coloured by generator."""
    pts = np.concatenate([real, fake]) if len(real) + len(fake) else np.zeros((1, 2))
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    pad = 0.05 * span
    lo = (lo + hi) / 2 - span / 2 - pad
    scale = (size - 20) / (span + 2 * pad)

    def xy(p):
        return 10 + (p[0] - lo[0]) * scale, size - 10 - (p[1] - lo[1]) * scale

    colours = palette(k)
    body = ['<g class="real" stroke="#888888" stroke-width="0.8">']
    for p in real:
        x, y = xy(p)
        body.append(f'<path d="M{x - 2:.2f} {y - 2:.2f}L{x + 2:.2f} {y + 2:.2f}M{x - 2:.2f} {y + 2:.2f}L{x + 2:.2f} {y - 2:.2f}"/>')
    body.append("</g>")
    body.append('<g class="fake">')
    for p, lab in zip(fake, labels):
        x, y = xy(p)
        body.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.6" fill="{colours[int(lab) - 1]}"/>')
    body.append("</g>")
    width = size + 110
    body.append('<g class="legend">')
    body.append(f'<text x="{size + 10}" y="20">real</text>')
    body.append(f'<path d="M{size + 45} 14l6 6m0 -6l-6 6" stroke="#888888"/>')
    for i, c in enumerate(colours):
        y = 36 + 14 * i
        body.append(
            f'<g class="legend-entry"><rect x="{size + 10}" y="{y - 9}" width="10" height="10" fill="{c}"/>'
            f'<text x="{size + 26}" y="{y}">G{i + 1}</text></g>'
        )
    body.append("</g>")
    return _svg(width, max(size, 50 + 14 * k), body)


def _heat(v: float) -> str:
    """Blue for -1, white for 0, red for +1."""
    v = float(np.clip(v, -1.0, 1.0))
    if v >= 0:
        r, g, b = 1.0, 1.0 - v, 1.0 - v
    else:
        r, g, b = 1.0 + v, 1.0 + v, 1.0
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def corr_svg(corr: np.ndarray, cell: int = 36) -> str:
    k = corr.shape[0]
    margin = 40
    body = []
    for i in range(k):
        body.append(f'<text x="{margin - 6}" y="{margin + cell * i + cell / 2 + 4:.1f}" text-anchor="end">G{i + 1}</text>')
        body.append(f'<text x="{margin + cell * i + cell / 2:.1f}" y="{margin - 8}" text-anchor="middle">G{i + 1}</text>')
    for i in range(k):
        for j in range(k):
            v = corr[i, j]
            body.append(
                f'<rect class="cell" x="{margin + cell * j}" y="{margin + cell * i}" width="{cell}" height="{cell}" '
                f'fill="{_heat(v)}" stroke="#dddddd"><title>{v:.3f}</title></rect>'
            )
    side = 2 * margin + cell * k
    return _svg(side, side, body)


def tree_svg(means: list, exemplars: list[np.ndarray], depth: int) -> str:
    """Nodes in heap order with their mean response; leaves list exemplars."""
    k = 2**depth
    leaf_w, level_h = 130, 80
    width = leaf_w * k + 20
    height = level_h * depth + 60 + 14 * (exemplars[0].shape[0] if exemplars else 0) + 40

    def pos(m):
        level = int(np.floor(np.log2(m + 1)))
        first = 2**level - 1
        slots = 2**level
        x = 10 + (m - first + 0.5) * (width - 20) / slots
        return x, 30 + level * level_h

    body = ['<g class="edges" stroke="#999999">']
    for m in range(k - 1):
        x0, y0 = pos(m)
        for c in (2 * m + 1, 2 * m + 2):
            x1, y1 = pos(c)
            body.append(f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y1:.1f}"/>')
    body.append("</g>")
    for m, mean in enumerate(means):
        x, y = pos(m)
        label = "unused" if mean is None else f"({mean[0]:.2f}, {mean[1]:.2f})"
        leaf = m >= k - 1
        parts = [
            f'<g class="node" data-node="{m}">',
            f'<circle cx="{x:.1f}" cy="{y:.1f}" r="6" fill="{"#f0a030" if leaf else "#4070c0"}"/>',
            f'<text x="{x:.1f}" y="{y - 10:.1f}" text-anchor="middle">{escape(label)}</text>',
        ]
        if leaf:
            for r, p in enumerate(exemplars[m - (k - 1)]):
                parts.append(
                    f'<text class="exemplar" x="{x:.1f}" y="{y + 22 + 14 * r:.1f}" text-anchor="middle">'
                    f"{p[0]:.2f}, {p[1]:.2f}</text>"
                )
        parts.append("</g>")
        body.append("".join(parts))
    return _svg(int(width), int(height), body)


def emit_plots(run_dir: str | Path) -> list[Path]:
    """Write scatter.svg, corr.svg and (for trees) tree.svg into ``run_dir``."""
    from .runner import load_run

    run_dir = Path(run_dir)
    cfg, bundle, step = load_run(run_dir)
    samples_path = run_dir / "samples.npz"
    if not samples_path.is_file():
        raise FileNotFoundError(f"no samples in {run_dir}")
    with np.load(samples_path) as s:
        real, fake, z, labels = s["real"], s["fake"], s["z"], s["labels"]
    gen = bundle.generator
    k = gen.n_generators
    written = []

    path = run_dir / "scatter.svg"
    path.write_text(scatter_svg(real, fake, labels, k))
    written.append(path)

    if isinstance(gen, HMoGGenerator):
        corr = gating_correlation(gen.tree, z) if k > 1 else np.ones((1, 1))
    elif hasattr(gen, "responsibilities"):
        corr = correlation_matrix(gen.responsibilities(Tensor(z)))
    else:
        onehot = np.zeros((len(labels), k))
        onehot[np.arange(len(labels)), labels - 1] = 1.0
        corr = correlation_matrix(onehot)
    path = run_dir / "corr.svg"
    path.write_text(corr_svg(corr))
    written.append(path)

    if isinstance(gen, HMoGGenerator):
        means = node_average_response(gen.tree, gen.shared, z)
        rng = make_rng(cfg.seed, STREAM_EVAL, step, 1)
        ex = top_leaf_exemplars(gen.tree, gen.shared, EXEMPLAR_DRAWS, EXEMPLAR_TOP, rng)
        path = run_dir / "tree.svg"
        path.write_text(tree_svg(means, [e["samples"] for e in ex], gen.tree.depth))
        written.append(path)
    return written
