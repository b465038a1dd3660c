"""Planted-source datasets used as ground truth.

All randomness comes from numpy's PCG64 generator.  A seed is expanded
with ``np.random.SeedSequence(seed).spawn(k)`` into independent child
streams, one per purpose, so adding a new consumer never perturbs the
existing ones:

* ``gen_sources``: child ``i`` draws source column ``i``.
* ``plant_dataset``: children 0..3 draw mixing, feature noise, label
  direction and label noise.
* ``plant_spatial``: its own ``seed`` drives bump positions and sources.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, GenerationError, ParameterError
from .io_formats import FeatureMatrix, LabelVector, SpatialFeatureMap

DISTRIBUTIONS = ("laplace", "uniform", "gaussian")
MAX_CONDITION = 10.0
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class SourceSpec:
    n_sources: int
    distributions: tuple
    seed: int = 0

    def __post_init__(self):
        dists = tuple(self.distributions)
        object.__setattr__(self, "distributions", dists)
        if self.n_sources < 1:
            raise ParameterError("n_sources must be >= 1")
        if len(dists) != self.n_sources:
            raise ParameterError(
                f"{self.n_sources} sources but {len(dists)} distributions given"
            )
        for d in dists:
            if d not in DISTRIBUTIONS:
                raise ParameterError(f"unknown distribution {d!r}, expected one of {DISTRIBUTIONS}")
        if dists.count("gaussian") > 1:
            raise ParameterError("at most one gaussian source is identifiable")


@dataclass
class PlantedDataset:
    features: FeatureMatrix
    labels: LabelVector
    true_sources: np.ndarray
    mixing: np.ndarray
    noise_sigma: float
    label_direction: np.ndarray
    spec: SourceSpec = field(default=None, repr=False)
    seed: int = 0


def _draw(dist, rng, n):
    if dist == "laplace":
        return rng.laplace(0.0, 1.0, n)
    if dist == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    return rng.standard_normal(n)


def gen_sources(spec, n_samples):
    """N x n matrix of independent, empirically standardized sources."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_sources)
    cols = []
    for dist, ss in zip(spec.distributions, streams):
        x = _draw(dist, np.random.default_rng(ss), n_samples)
        x = x - x.mean()
        sd = x.std()
        cols.append(x / sd if sd > 0 else x)
    return np.column_stack(cols)


def random_mixing(m, n, rng):
    """m x n standard-normal matrix with condition number <= 10."""
    if m < n:
        raise ParameterError(f"ambient dimension m={m} smaller than n_sources={n}")
    for _ in range(MAX_RESAMPLES):
        A = rng.standard_normal((m, n))
        if np.linalg.cond(A) <= MAX_CONDITION:
            return A
    raise GenerationError(
        f"no {m}x{n} mixing with condition number <= {MAX_CONDITION} after {MAX_RESAMPLES} draws"
    )


def equal_frequency_bins(score, K):
    """Quantize ``score`` into K classes of (nearly) equal size by rank."""
    n = score.size
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(score, kind="stable")] = np.arange(n)
    return (rank * K) // n


def plant_dataset(spec, n_samples, m, noise_sigma, K, seed, label_noise=0.2):
    """Mix planted sources into ``m`` dimensions and attach ordinal labels.

    Labels depend on the features only through the sources: they are
    equal-frequency bins of ``S @ v`` plus Gaussian label noise, where the
    unit vector ``v`` has equal-magnitude, random-sign coordinates along the
    right singular vectors of the mixing.  Every principal direction of the
    planted signal therefore carries label information.
    """
    if K < 2:
        raise ParameterError("K must be >= 2")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    S = gen_sources(spec, n_samples)
    mix_ss, noise_ss, dir_ss, lab_ss = np.random.SeedSequence(seed).spawn(4)
    A = random_mixing(m, spec.n_sources, np.random.default_rng(mix_ss))
    X = S @ A.T
    if noise_sigma > 0:
        X = X + noise_sigma * np.random.default_rng(noise_ss).standard_normal(X.shape)
    # spread the label direction evenly over the principal axes of the mixed
    # signal: dropping any one of them loses 1/n of the label variance
    _, _, Vt = np.linalg.svd(A, full_matrices=False)
    signs = np.random.default_rng(dir_ss).choice([-1.0, 1.0], spec.n_sources)
    v = Vt.T @ signs / np.sqrt(spec.n_sources)
    score = S @ v + label_noise * np.random.default_rng(lab_ss).standard_normal(n_samples)
    labels = LabelVector(equal_frequency_bins(score, K), K)
    return PlantedDataset(
        features=FeatureMatrix(X, source=f"planted(seed={seed})"),
        labels=labels,
        true_sources=S,
        mixing=A,
        noise_sigma=float(noise_sigma),
        label_direction=v,
        spec=spec,
        seed=seed,
    )


def plant_spatial(dataset, H, W, lesion_density, seed=0, amplitude=8.0, indices=None):
    """Spatial feature maps whose pooled average reproduces the features.

    Every image gets ``lesion_density`` bumps (a count per image) at
    distinct random cells.  A bump for source ``j`` adds
    ``amplitude * sign(v_j) * mixing[:, j]`` to the cell, i.e. it pushes the
    image towards higher classes along that source.  The bump field is
    mean-subtracted over the grid so the global average equals the pooled
    vector exactly.

    Returns a SpatialFeatureMap whose ``bumps`` attribute is an integer
    array of rows ``(image, y, x, source)``.
    """
    lesion_density = int(lesion_density)
    if H < 1 or W < 1:
        raise ParameterError("H and W must be >= 1")
    if lesion_density < 0:
        raise ParameterError("lesion_density must be >= 0")
    if H * W < lesion_density:
        raise ParameterError(f"{lesion_density} bumps do not fit in a {H}x{W} grid")
    X = np.asarray(dataset.features, dtype=np.float64)
    if indices is None:
        indices = np.arange(X.shape[0])
    indices = np.asarray(indices, dtype=np.int64)
    pooled = X[indices]
    n_img, m = pooled.shape
    n_src = dataset.mixing.shape[1]
    directions = (dataset.mixing * np.sign(dataset.label_direction)).T  # n_src x m

    data = np.broadcast_to(pooled[:, None, None, :], (n_img, H, W, m)).copy()
    bumps = []
    rng = np.random.default_rng(seed)
    for img in range(n_img):
        if lesion_density == 0:
            continue
        cells = rng.choice(H * W, size=lesion_density, replace=False)
        srcs = rng.integers(0, n_src, size=lesion_density)
        field_ = np.zeros((H, W, m))
        for cell, src in zip(cells, srcs):
            y, x = divmod(int(cell), W)
            field_[y, x] += amplitude * directions[src]
            bumps.append((img, y, x, int(src)))
        data[img] += field_ - field_.mean(axis=(0, 1))
    fmap = SpatialFeatureMap(data)
    fmap.bumps = np.array(bumps, dtype=np.int64).reshape(-1, 4)
    return fmap


def amari_index(estimated_unmixing, true_mixing, whitening=None):
    """Amari performance index of ``P = unmixing @ whitening @ mixing``.

    0 for a perfect separation (P a scaled permutation), 1 for the worst
    case.  ``whitening`` may be omitted when ``estimated_unmixing`` already
    maps raw features to components.
    """
    P = np.asarray(estimated_unmixing, dtype=np.float64)
    if whitening is not None:
        P = P @ np.asarray(whitening, dtype=np.float64)
    P = np.abs(P @ np.asarray(true_mixing, dtype=np.float64))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DimensionError(f"unmixing @ mixing must be square, got {P.shape}")
    n = P.shape[0]
    if n == 1:
        return 0.0
    rows = (P.sum(axis=1) / P.max(axis=1) - 1.0).sum()
    cols = (P.sum(axis=0) / P.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * n) / (n - 1))


def ground_truth_sections(dataset, fmap=None):
    """Sections for the ground-truth sidecar file."""
    spec = dataset.spec
    body = {
        "n_sources": dataset.mixing.shape[1],
        "distributions": ",".join(spec.distributions) if spec else "",
        "source_seed": spec.seed if spec else 0,
        "seed": dataset.seed,
        "noise_sigma": dataset.noise_sigma,
        "K": dataset.labels.K,
        "mixing": dataset.mixing,
        "label_direction": dataset.label_direction,
    }
    if fmap is not None and fmap.bumps is not None and fmap.bumps.size:
        body["bumps"] = fmap.bumps.astype(np.float64)
    return {"truth": body}
