"""Exact t-SNE projection of embedding tables plus scatter output.

O(n^2) affinities and gradients; datasets here are at most a few thousand
points, and exactness keeps the invariants testable.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingTable

# Fixed 12-color palette; class index -> color, cycling past 12 classes.
SCATTER_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
)
SVG_SIZE = 800
SVG_MARGIN_FRACTION = 0.05

_P_FLOOR = 1e-12
_MIN_GAIN = 0.01


class ProjectionError(ValueError):
    """Input unsuitable for the projection."""


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0
    entropy_tol: float = 1e-5
    max_bisection_steps: int = 50

    def __post_init__(self) -> None:
        if self.perplexity < 2:
            raise ValueError("perplexity must be at least 2")
        if self.iterations < 250:
            raise ValueError("iterations must be at least 250")


def _squared_distances(X: np.ndarray) -> np.ndarray:
    norms = (X * X).sum(axis=1)
    D = norms[:, None] + norms[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def conditional_affinities(
    D: np.ndarray, perplexity: float, tol: float = 1e-5, max_steps: int = 50
) -> np.ndarray:
    """Row-stochastic conditional affinities with per-row bandwidth search.

    Each row's Gaussian bandwidth is bisected until the row entropy is within
    tol of log(perplexity). Degenerate rows (all distances equal) keep the
    uniform distribution the search converges to.
    """
    n = len(D)
    target = np.log(perplexity)
    P = np.zeros((n, n))
    others = ~np.eye(n, dtype=bool)
    for i in range(n):
        d = D[i][others[i]]
        beta = 1.0
        low, high = 0.0, np.inf
        row = None
        for _ in range(max_steps):
            weights = np.exp(-d * beta)
            total = weights.sum()
            if total <= 0.0:
                # beta ran away on huge distances; back off
                high = beta
                beta = (low + high) / 2.0
                continue
            row = weights / total
            entropy = np.log(total) + beta * float((d * weights).sum()) / total
            if abs(entropy - target) < tol:
                break
            if entropy > target:
                low = beta
                beta = beta * 2.0 if np.isinf(high) else (low + high) / 2.0
            else:
                high = beta
                beta = (low + high) / 2.0
        P[i][others[i]] = row
    return P


def _kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / Q[mask])).sum())


def _student_t_affinities(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num, np.maximum(num / num.sum(), _P_FLOOR)


def tsne_layout(
    X: np.ndarray, config: TsneConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project rows of X to 2-d.

    Gradient descent on KL(P||Q) with per-coordinate adaptive gains; the
    conventional 4x gradient constant is absorbed into the learning rate,
    both as in the reference implementation of the method. Without gains a
    flat step of 200 diverges at small n.

    Returns (coords, kl_history, conditional_P). kl_history[i] is the KL
    divergence against the un-exaggerated P after update i+1.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not np.all(np.isfinite(X)):
        raise ProjectionError("embeddings must be finite")
    if n < 3 * config.perplexity + 1:
        raise ProjectionError(
            f"need at least {int(3 * config.perplexity + 1)} points for "
            f"perplexity {config.perplexity}, got {n}"
        )
    D = _squared_distances(X)
    cond = conditional_affinities(
        D, config.perplexity, config.entropy_tol, config.max_bisection_steps
    )
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, _P_FLOOR)
    rng = np.random.default_rng(config.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history = np.empty(config.iterations)
    num, Q = _student_t_affinities(Y)
    for iteration in range(config.iterations):
        exaggerated = iteration < config.exaggeration_iters
        P_eff = P * config.early_exaggeration if exaggerated else P
        momentum = (
            config.momentum_early
            if iteration < config.momentum_switch_iter
            else config.momentum_late
        )
        W = (P_eff - Q) * num
        grad = W.sum(axis=1)[:, None] * Y - W @ Y
        same_direction = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_direction, gains * 0.8, gains + 0.2)
        np.maximum(gains, _MIN_GAIN, out=gains)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        num, Q = _student_t_affinities(Y)
        kl_history[iteration] = _kl_divergence(P, Q)
    Y = Y - Y.mean(axis=0)
    return Y, kl_history, cond


def tsne(
    table: EmbeddingTable, labels: dict[str, str], config: TsneConfig = TsneConfig()
) -> list[tuple[str, float, float, str]]:
    """Project a table to 2-d points tagged with each example's class."""
    missing = [i for i in table.ids if i not in labels]
    if missing:
        raise ProjectionError(f"no label for ids: {missing[:10]}")
    coords, _, _ = tsne_layout(table.vectors.astype(np.float64), config)
    return [
        (example_id, float(x), float(y), labels[example_id])
        for example_id, (x, y) in zip(table.ids, coords)
    ]


def emit_scatter(points, destination, format: str = "svg") -> Path:
    """Write projected points as CSV (id,x,y,class) or a class-colored SVG."""
    points = list(points)
    if not points:
        raise ProjectionError("no points to plot")
    if format not in ("csv", "svg"):
        raise ProjectionError(f"format must be csv or svg, got {format!r}")
    path = Path(destination)
    if format == "csv":
        lines = ["id,x,y,class"]
        lines += [f"{pid},{x:.9g},{y:.9g},{cls}" for pid, x, y, cls in points]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path
    path.write_text(_scatter_svg(points), encoding="utf-8")
    return path


def load_scatter_csv(source) -> list[tuple[str, float, float, str]]:
    lines = Path(source).read_text(encoding="utf-8").strip().splitlines()
    out = []
    for line in lines[1:]:
        pid, x, y, cls = line.split(",")
        out.append((pid, float(x), float(y), cls))
    return out


def _scatter_svg(points) -> str:
    classes = sorted({cls for _, _, _, cls in points})
    color = {
        cls: SCATTER_PALETTE[i % len(SCATTER_PALETTE)] for i, cls in enumerate(classes)
    }
    xs = np.array([p[1] for p in points])
    ys = np.array([p[2] for p in points])
    margin = SVG_SIZE * SVG_MARGIN_FRACTION
    inner = SVG_SIZE - 2 * margin
    span_x = max(xs.max() - xs.min(), 1e-12)
    span_y = max(ys.max() - ys.min(), 1e-12)

    def to_px(x: float, y: float) -> tuple[float, float]:
        px = margin + (x - xs.min()) / span_x * inner
        # SVG y grows downward
        py = margin + (ys.max() - y) / span_y * inner
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" '
        f'height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        f'<rect width="{SVG_SIZE}" height="{SVG_SIZE}" fill="white"/>',
    ]
    for pid, x, y, cls in points:
        px, py = to_px(x, y)
        parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="{color[cls]}" '
            f'fill-opacity="0.8"><title>{pid}</title></circle>'
        )
    for i, cls in enumerate(classes):
        y_offset = 20 + 18 * i
        parts.append(
            f'<rect x="12" y="{y_offset - 9}" width="10" height="10" fill="{color[cls]}"/>'
        )
        parts.append(
            f'<text x="28" y="{y_offset}" font-family="sans-serif" font-size="12">{cls}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
