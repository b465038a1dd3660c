"""Exact O(N^2) t-SNE."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, FileIOError, ParameterError

log = logging.getLogger(__name__)

ENTROPY_TOL = 1e-5
MAX_BISECTIONS = 50
P_FLOOR = 1e-12
# one color per class; classes >= 5 reuse the palette cyclically
PALETTE = ("#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd")


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 250:
            raise ParameterError("t-SNE needs at least 250 iterations")
        if not self.perplexity > 0:
            raise ParameterError("perplexity must be > 0")


def squared_distances(X):
    sq = (X * X).sum(axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _row_entropy(d, beta):
    """Entropy (nats) and probabilities of exp(-beta d), d shifted to min 0."""
    p = np.exp(-beta * d)
    s = p.sum()
    p /= s
    nz = p > 0
    return -(p[nz] * np.log(p[nz])).sum(), p


def conditional_affinities(X, perplexity):
    """Rows P_{j|i} with entropy log(perplexity), bandwidth by bisection on log(beta)."""
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    D = squared_distances(X)
    target = np.log(perplexity)
    P = np.zeros((N, N))
    entropies = np.zeros(N)
    for i in range(N):
        d = np.delete(D[i], i)
        d = d - d.min()
        scale = np.median(d[d > 0]) if np.any(d > 0) else 1.0
        lo, hi = np.log(1e-20 / scale), np.log(1e20 / scale)
        for _ in range(MAX_BISECTIONS):
            mid = 0.5 * (lo + hi)
            H, p = _row_entropy(d, np.exp(mid))
            if abs(H - target) <= ENTROPY_TOL:
                break
            if H > target:
                lo = mid
            else:
                hi = mid
        P[i, np.arange(N) != i] = p
        entropies[i] = H
    return P, entropies


def pairwise_affinities(X, perplexity=30.0):
    """Symmetric joint affinities ``(P_{j|i} + P_{i|j}) / 2N``.

    Returns ``(P, flagged)``; ``flagged`` is True when duplicate points were
    found, in which case every off-diagonal entry is floored at 1e-12 and
    P renormalized.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N < 10:
        raise ParameterError("t-SNE affinities need at least 10 points")
    Pc, _ = conditional_affinities(X, perplexity)
    P = (Pc + Pc.T) / (2.0 * N)
    D = squared_distances(X)
    flagged = bool(np.any(D[~np.eye(N, dtype=bool)] == 0.0))
    if flagged:
        log.warning("duplicate points found; flooring affinities at %g", P_FLOOR)
        off = ~np.eye(N, dtype=bool)
        P[off] = np.maximum(P[off], P_FLOOR)
        P /= P.sum()
    return P, flagged


def _q_and_grad(Y, P):
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    PQ = (P - Q) * num
    grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)
    return Q, grad


def kl_divergence(P, Q):
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))).sum())


def run_tsne(data, labels=None, cfg=None, P=None):
    """Embed ``data`` in 2-D; returns ``(Y, kl_trace)``.

    Gradient descent with momentum and per-coordinate gains (the usual
    delta-bar-delta adaptation, minimum gain 0.01).  The embedding is
    re-centered after every step.  ``kl_trace[t]`` is KL(P||Q) with the
    un-exaggerated P after step t.
    """
    cfg = cfg or TsneConfig()
    X = np.asarray(data, dtype=np.float64)
    N = X.shape[0]
    if cfg.perplexity >= N / 3.0:
        raise ParameterError(f"perplexity {cfg.perplexity} must be below N/3 = {N / 3.0:.3g}")
    if P is None:
        P, _ = pairwise_affinities(X, cfg.perplexity)
    rng = np.random.default_rng(cfg.seed)
    Y = 1e-4 * rng.standard_normal((N, 2))
    Y -= Y.mean(axis=0)
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        P_eff = P * cfg.exaggeration if it < cfg.exaggeration_iters else P
        _, grad = _q_and_grad(Y, P_eff)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"non-finite t-SNE gradient at iteration {it}")
        mom = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - cfg.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        num = 1.0 / (1.0 + squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        trace[it] = kl_divergence(P, num / num.sum())
    return Y, trace


def embedding_to_svg(embedding, labels, path, size=400, margin=10, radius=2.5):
    """Scatter plot, one circle per row in row order, colored by class."""
    Y = np.asarray(embedding, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(labels if labels is not None else np.zeros(len(Y)), dtype=np.int64).ravel()
    if y.size != Y.shape[0]:
        raise DimensionError(f"{y.size} labels for {Y.shape[0]} points")
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="#ffffff"/>',
    ]
    if Y.shape[0]:
        lo = Y.min(axis=0)
        span = np.ptp(Y, axis=0)
        span[span == 0] = 1.0
        pts = margin + (Y - lo) / span * (size - 2 * margin)
        for (px, py), cls in zip(pts, y):
            lines.append(
                f'<circle cx="{px:.3f}" cy="{size - py:.3f}" r="{radius}" '
                f'fill="{PALETTE[cls % len(PALETTE)]}"/>'
            )
    lines.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
