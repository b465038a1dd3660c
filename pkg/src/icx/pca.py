"""PCA by eigendecomposition of the sample covariance."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError, RankDeficiencyError

WHITEN_EPS = 1e-10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # m x m, columns are principal directions
    eigenvalues: np.ndarray  # descending, >= 0

    @property
    def dim(self):
        return self.mean.size

    def explained_fraction(self):
        """Cumulative explained-variance fraction.

        Eigenvalues below ``WHITEN_EPS`` times the largest count as zero so
        that rank-deficient data reaches exactly 1.0 at its numerical rank.
        """
        lam = self.eigenvalues.copy()
        if lam.size == 0 or lam[0] <= 0:
            return np.zeros_like(lam)
        lam[lam <= WHITEN_EPS * lam[0]] = 0.0
        cum = np.cumsum(lam)
        return cum / cum[-1]

    def numerical_rank(self, eps=WHITEN_EPS):
        lam = self.eigenvalues
        if lam.size == 0 or lam[0] <= 0:
            return 0
        return int(np.count_nonzero(lam > eps * lam[0]))

    def to_section(self):
        return {
            "m": self.dim,
            "mean": self.mean,
            "eigenvalues": self.eigenvalues,
            "components": self.components,
        }

    @classmethod
    def from_section(cls, sec):
        return cls(
            mean=np.ravel(sec["mean"]),
            components=np.atleast_2d(sec["components"]),
            eigenvalues=np.ravel(sec["eigenvalues"]),
        )


def fit_pca(features):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"features must be 2-D, got {X.shape}")
    if X.shape[0] < 2:
        raise ParameterError("PCA needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    lam, vecs = np.linalg.eigh(cov)
    order = np.argsort(lam, kind="stable")[::-1]
    lam = np.clip(lam[order], 0.0, None)
    vecs = vecs[:, order]
    # sign convention: largest-magnitude entry of each column is positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return PcaModel(mean=mean, components=vecs * signs, eigenvalues=lam)


def explained_variance_report(model, thresholds):
    """Minimal component count reaching each cumulative-variance threshold.

    Returns a list of ``(threshold, k)`` pairs.  For all-zero variance every
    k is 0.
    """
    frac = model.explained_fraction()
    out = []
    for t in thresholds:
        t = float(t)
        if not 0.0 < t <= 1.0:
            raise ParameterError(f"threshold {t} outside (0, 1]")
        if frac.size == 0 or frac[-1] == 0:
            out.append((t, 0))
            continue
        out.append((t, int(np.argmax(frac >= t)) + 1))
    return out


def whitening_matrix(model, k, eps=WHITEN_EPS):
    """k x m matrix mapping centered data to unit covariance."""
    m = model.dim
    if not 1 <= k <= m:
        raise ParameterError(f"k={k} outside 1..{m}")
    lam = model.eigenvalues
    floor = eps * lam[0] if lam[0] > 0 else 0.0
    if lam[k - 1] <= floor:
        k_max = model.numerical_rank(eps)
        raise RankDeficiencyError(
            f"eigenvalue {k} is {lam[k - 1]:.3g}, below {floor:.3g}; at most {k_max} dims can be whitened",
            k_max=k_max,
        )
    return (model.components[:, :k] / np.sqrt(lam[:k])).T


def whiten(features, model, k, eps=WHITEN_EPS):
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != model.dim:
        raise DimensionError(f"features have {X.shape[-1]} cols, model expects {model.dim}")
    return (X - model.mean) @ whitening_matrix(model, k, eps).T
