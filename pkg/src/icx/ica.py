"""Symmetric FastICA on PCA-whitened features.

The fitted model keeps the raw unmixing ``W = rotation @ whitening`` and a
separate output convention (``component_order``, ``component_signs``)::

    raw = (f - center) @ W.T
    s[:, i] = component_signs[i] * raw[:, component_order[i]]
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ParameterError
from .pca import fit_pca, whitening_matrix

log = logging.getLogger(__name__)

# E[log cosh(nu)] for nu ~ N(0, 1)
_GAUSS_LOGCOSH = 0.37456720749
NEGENTROPY_FLOOR = 1e-4


@dataclass(frozen=True)
class IcaConfig:
    n_components: int
    contrast: str = "logcosh"
    tol: float = 1e-4
    max_iter: int = 200
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ParameterError("n_components must be >= 1")
        if self.contrast not in ("logcosh", "exp"):
            raise ParameterError(f"unknown contrast {self.contrast!r}")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if self.max_iter < 1 or self.restarts < 0:
            raise ParameterError("max_iter must be >= 1 and restarts >= 0")


@dataclass(frozen=True)
class IcModel:
    center: np.ndarray
    whitening: np.ndarray
    rotation: np.ndarray
    component_order: np.ndarray
    component_signs: np.ndarray
    converged: bool = True
    n_iter: int = 0
    gaussian_warning: bool = False
    orientation: str = "skew"

    @property
    def n_components(self):
        return self.rotation.shape[0]

    @property
    def dim(self):
        return self.center.size

    @property
    def unmixing(self):
        return self.rotation @ self.whitening

    @property
    def mixing_pinv(self):
        return np.linalg.pinv(self.unmixing)

    def effective_unmixing(self):
        """Unmixing rows with order/sign conventions folded in."""
        return self.component_signs[:, None] * self.unmixing[self.component_order]

    def to_section(self):
        return {
            "n_components": self.n_components,
            "m": self.dim,
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "gaussian_warning": bool(self.gaussian_warning),
            "orientation": self.orientation,
            "center": self.center,
            "whitening": self.whitening,
            "rotation": self.rotation,
            "order": self.component_order.astype(np.float64),
            "signs": self.component_signs.astype(np.float64),
        }

    @classmethod
    def from_section(cls, sec):
        return cls(
            center=np.ravel(sec["center"]),
            whitening=np.atleast_2d(sec["whitening"]),
            rotation=np.atleast_2d(sec["rotation"]),
            component_order=np.ravel(sec["order"]).astype(np.int64),
            component_signs=np.ravel(sec["signs"]).astype(np.float64),
            converged=bool(sec.get("converged", True)),
            n_iter=int(sec.get("n_iter", 0)),
            gaussian_warning=bool(sec.get("gaussian_warning", False)),
            orientation=str(sec.get("orientation", "skew")),
        )


def _nonlinearity(contrast):
    if contrast == "logcosh":
        def g(u):
            t = np.tanh(u)
            return t, 1.0 - t * t
    else:
        def g(u):
            e = np.exp(-0.5 * u * u)
            return u * e, (1.0 - u * u) * e
    return g


def sym_decorrelation(W):
    """W <- (W W^T)^(-1/2) W."""
    lam, E = np.linalg.eigh(W @ W.T)
    lam = np.clip(lam, np.finfo(float).tiny, None)
    return (E / np.sqrt(lam)) @ E.T @ W


def random_orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def _fastica_sym(Z, W, g, tol, max_iter):
    """Fixed-point iterations on whitened Z (N x n). Returns (W, gap, iters)."""
    N = Z.shape[0]
    W = sym_decorrelation(W)
    gap = np.inf
    for it in range(1, max_iter + 1):
        U = Z @ W.T
        gu, dgu = g(U)
        W_new = sym_decorrelation(gu.T @ Z / N - dgu.mean(axis=0)[:, None] * W)
        gap = float(np.max(np.abs(1.0 - np.abs(np.einsum("ij,ij->i", W_new, W)))))
        W = W_new
        if gap < tol:
            return W, gap, it
    return W, gap, max_iter


def negentropy(u):
    """Logcosh negentropy approximation per column of standardized ``u``."""
    return (np.log(np.cosh(u)).mean(axis=0) - _GAUSS_LOGCOSH) ** 2


def _skew_convention(raw):
    skew = (raw ** 3).mean(axis=0)
    signs = np.where(skew < 0, -1.0, 1.0)
    order = np.argsort(-np.abs(skew), kind="stable")
    return order, signs[order]


def fit_ica(features, cfg, labels=None):
    """Estimate n independent components of ``features``.

    Without labels the output convention is positive skew, ordered by
    decreasing |skew|; with labels ``normalize_components`` is applied.
    A run that never meets ``cfg.tol`` is returned with ``converged=False``
    (best attempt by final gap) rather than raising.
    """
    X = np.asarray(features, dtype=np.float64)
    n = cfg.n_components
    if n > X.shape[1]:
        raise ParameterError(f"n_components={n} exceeds feature dimension {X.shape[1]}")
    pca = fit_pca(X)
    whitening = whitening_matrix(pca, n)
    Z = (X - pca.mean) @ whitening.T
    g = _nonlinearity(cfg.contrast)
    rng = np.random.default_rng(cfg.seed)

    # A fixed point whose components are all Gaussian-like is a degenerate
    # solution (finite-sample noise), not a separation: keep restarting.
    best = None
    total_iter = 0
    for attempt in range(cfg.restarts + 1):
        W0 = random_orthogonal(n, rng)
        W, gap, it = _fastica_sym(Z, W0, g, cfg.tol, cfg.max_iter)
        total_iter += it
        flat = bool(np.all(negentropy(Z @ W.T) < NEGENTROPY_FLOOR))
        ok = gap < cfg.tol and not flat
        key = (not ok, flat, gap)
        if best is None or key < best[0]:
            best = (key, W, gap, flat)
        if ok:
            break
        log.debug("FastICA attempt %d failed (gap %.3g, gaussian-like %s)", attempt, gap, flat)
    _, W, gap, flat = best
    converged = gap < cfg.tol and not flat
    gaussian = (not converged) and flat
    raw = Z @ W.T
    if not converged:
        log.warning(
            "FastICA did not converge (gap %.3g after %d iterations%s)",
            gap, total_iter, ", components look gaussian" if gaussian else "",
        )
    order, signs = _skew_convention(raw)
    model = IcModel(
        center=pca.mean,
        whitening=whitening,
        rotation=W,
        component_order=order,
        component_signs=signs,
        converged=converged,
        n_iter=total_iter,
        gaussian_warning=gaussian,
        orientation="skew",
    )
    if labels is not None:
        model = normalize_components(model, X, labels)
    return model


def raw_components(model, features):
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != model.dim:
        raise DimensionError(f"features have {X.shape[-1]} cols, model expects {model.dim}")
    return (X - model.center) @ model.unmixing.T


def transform(model, features):
    raw = raw_components(model, features)
    return raw[..., model.component_order] * model.component_signs


def inverse_transform(model, s):
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != model.n_components:
        raise DimensionError(f"expected {model.n_components} components, got {s.shape[-1]}")
    raw = np.empty_like(s)
    raw[..., model.component_order] = s * model.component_signs
    return model.center + raw @ model.mixing_pinv.T


def normalize_components(model, features, labels):
    """Orient components so class-0 samples have positive mean.

    Positive values then mark the absence of the condition and negative
    values its presence.  Components are ordered by decreasing class-0
    mean magnitude.  Without class-0 samples the positive-skew convention
    is used and ``orientation`` is set to ``"skew"``.
    """
    raw = raw_components(model, features)
    y = np.asarray(labels).ravel()
    if y.size != raw.shape[0]:
        raise DimensionError(f"{y.size} labels for {raw.shape[0]} samples")
    mask = y == 0
    if not mask.any():
        log.warning("no class-0 samples; falling back to positive-skew orientation")
        order, signs = _skew_convention(raw)
        return replace(model, component_order=order, component_signs=signs, orientation="skew")
    mean0 = raw[mask].mean(axis=0)
    order = np.argsort(-np.abs(mean0), kind="stable")
    signs = np.where(mean0[order] < 0, -1.0, 1.0)
    return replace(model, component_order=order, component_signs=signs, orientation="class0")
