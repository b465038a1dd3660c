"""Model bundles, per-image explanations and the end-to-end pipeline."""

import hashlib
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io_formats as fio
from .embed import TsneConfig, embedding_to_svg, run_tsne
from .errors import IcxError, ParameterError, ValidationError
from .ica import IcaConfig, IcModel, normalize_components, transform
from .ordinal_head import FitConfig, LinearHead, evaluate, fit_head
from .pca import PcaModel, explained_variance_report, fit_pca
from .scoremap import (
    component_contributions,
    contributions_to_text,
    global_sigma,
    input_size_for,
    parse_arch,
    project_to_input,
    receptive_field,
    render_heatmap,
    render_mask,
    spatial_ic_map,
)
from .selection import derive_seed, report_to_text, select_components

log = logging.getLogger(__name__)


# -- model bundles ------------------------------------------------------------


def save_bundle(path, pca=None, ica=None, head=None, meta=None):
    sections = {}
    if pca is not None:
        sections["pca"] = pca.to_section()
    if ica is not None:
        sections["ica"] = ica.to_section()
    if head is not None:
        sections["head"] = head.to_section()
    if meta:
        sections["meta"] = dict(meta)
    fio.write_model(sections, path)


def load_bundle(path):
    """Read a model file into ``{"pca", "ica", "head", "meta"}`` (missing -> None)."""
    sec = fio.read_model(path)
    return {
        "pca": PcaModel.from_section(sec["pca"]) if "pca" in sec else None,
        "ica": IcModel.from_section(sec["ica"]) if "ica" in sec else None,
        "head": LinearHead.from_section(sec["head"]) if "head" in sec else None,
        "meta": sec.get("meta", {}),
    }


def head_inputs(bundle, features):
    """Features as the bundle's head expects them (IC space if needed)."""
    head = bundle["head"]
    if head is not None and head.input_kind == "independent_components":
        if bundle["ica"] is None:
            raise ValidationError("head works on independent components but the model has no [ica]")
        return transform(bundle["ica"], features)
    return np.asarray(features, dtype=np.float64)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# -- selection follow-up ------------------------------------------------------


def finalize_selection(report, train_X, train_y, val_X, val_y, fit_cfg, master_seed):
    """Normalize the chosen ICA model and refit its head on normalized ICs."""
    model, _ = report.models[report.chosen_n]
    model = normalize_components(model, train_X, train_y)
    head = fit_head(
        transform(model, train_X), train_y,
        replace(fit_cfg, seed=derive_seed(master_seed, 3, report.chosen_n)),
        input_kind="independent_components",
    )
    kappa_ic = evaluate(head, transform(model, val_X), val_y)
    return model, head, kappa_ic


def write_selection_outputs(out_dir, report, model, head, kappa_ic, train_X, master_seed):
    out_dir = Path(out_dir)
    rep_path = out_dir / "selection.txt"
    with open(rep_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_to_text(report))
    model_path = out_dir / "model.txt"
    meta = {
        "n_components": report.chosen_n,
        "K": head.K,
        "kappa_full": report.kappa_full,
        "kappa_ic": kappa_ic,
        "epsilon": report.epsilon,
        "satisfied": report.satisfied,
        "seed": int(master_seed),
    }
    save_bundle(model_path, pca=fit_pca(train_X), ica=model, head=head, meta=meta)
    return [rep_path, model_path]


# -- explanations -------------------------------------------------------------


def explain_image(model, head, fmap, image, out_dir, components=None, sigma_mode="per_image",
                  arch="blocks:3", mode="negative"):
    """Write per-component heatmaps, hidden-grid masks and a contribution table.

    Returns the written paths in a fixed order.
    """
    out_dir = Path(out_dir)
    layers = parse_arch(arch) if isinstance(arch, str) else list(arch)
    rf = receptive_field(layers)
    in_shape = (input_size_for(layers, fmap.height), input_size_for(layers, fmap.width))
    comps = range(model.n_components) if components is None else components
    stem = f"image{image:04d}"
    written = []
    if head is not None:
        s = transform(model, fmap.data[image].mean(axis=(0, 1)))
        table = component_contributions(head, s)
        path = out_dir / f"{stem}_contributions.txt"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(contributions_to_text(table))
        written.append(path)
    for j in comps:
        sigma = global_sigma(model, fmap, j) if sigma_mode == "global" else None
        smap = spatial_ic_map(model, fmap, image, j, sigma_mode=sigma_mode, sigma=sigma, mode=mode)
        heat = out_dir / f"{stem}_ic{j}.pgm"
        render_heatmap(project_to_input(smap, rf, in_shape), heat)
        mask = out_dir / f"{stem}_ic{j}_mask.pgm"
        render_mask(smap.mask, mask)
        written += [heat, mask]
    return written


# -- pipeline -----------------------------------------------------------------


_PATH_KEYS = ("train_features", "train_labels", "val_features", "val_labels", "fmap")


@dataclass
class PipelineConfig:
    train_features: str
    train_labels: str
    val_features: str
    val_labels: str
    out_dir: str
    fmap: str = ""
    images: tuple = ()
    n_min: int = 1
    n_max: int = 10
    epsilon: float = 0.015
    contrast: str = "logcosh"
    ica_tol: float = 1e-4
    ica_max_iter: int = 200
    ica_restarts: int = 3
    head_l2: float = 1e-4
    head_learning_rate: float = 0.1
    head_epochs: int = 500
    tsne: bool = True
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_max_points: int = 300
    arch: str = "blocks:3"
    sigma: str = "per_image"
    pca_thresholds: tuple = (0.9, 0.95, 0.99)
    seed: int = 0
    extra: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_file(cls, path):
        """Parse a ``key = value`` config; relative paths resolve against its directory."""
        sections = fio.read_text_sections(path, allowed=("",))
        raw = dict(sections.get("", {}))
        base = Path(path).resolve().parent
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"{path}: unknown config key(s) {unknown}")
        for key in _PATH_KEYS + ("out_dir",):
            if key in raw and str(raw[key]):
                p = Path(str(raw[key]))
                raw[key] = str(p if p.is_absolute() else base / p)
        for key in ("images", "pca_thresholds"):
            if key in raw:
                text = str(raw[key])
                conv = int if key == "images" else float
                raw[key] = tuple(conv(t) for t in text.split(",") if t.strip())
        missing = [k for k in ("train_features", "train_labels", "val_features", "val_labels", "out_dir")
                   if k not in raw]
        if missing:
            raise ValidationError(f"{path}: missing config key(s) {missing}")
        return cls(**raw)

    def validate(self):
        for key in _PATH_KEYS:
            value = getattr(self, key)
            if key == "fmap" and not value:
                continue
            if not os.path.isfile(value):
                raise ValidationError(f"{key} path does not exist: {value}")
        if self.sigma not in ("per_image", "global"):
            raise ValidationError(f"sigma must be per_image or global, got {self.sigma!r}")
        if not 1 <= self.n_min <= self.n_max:
            raise ValidationError(f"invalid n range {self.n_min}..{self.n_max}")
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except OSError as exc:
            raise ValidationError(f"cannot create out_dir {self.out_dir}: {exc}") from exc


class PipelineAborted(Exception):
    def __init__(self, stage, error, manifest):
        super().__init__(f"stage {stage} failed: {error}")
        self.stage = stage
        self.error = error
        self.manifest = manifest


def _write_manifest(out_dir, files, note=None):
    out_dir = Path(out_dir)
    lines = [f"{sha256_file(p)}  {Path(p).relative_to(out_dir).as_posix()}" for p in files]
    if note:
        lines.append(f"# {note}")
    path = out_dir / "manifest.txt"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def run_pipeline(cfg):
    """Run pca report, selection, normalization, explanation and t-SNE.

    Returns the manifest path.  A failing stage writes a partial manifest
    and raises the stage's error.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    produced = []
    stage = "load"
    try:
        train_X = fio.read_feature_matrix(cfg.train_features)
        train_y = fio.read_labels(cfg.train_labels)
        val_X = fio.read_feature_matrix(cfg.val_features)
        val_y = fio.read_labels(cfg.val_labels)
        fmap = fio.read_spatial_map(cfg.fmap) if cfg.fmap else None

        stage = "pca"
        rows = explained_variance_report(fit_pca(train_X), cfg.pca_thresholds)
        path = out / "pca_report.txt"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join("threshold=%.6f components=%d\n" % r for r in rows))
        produced.append(path)

        stage = "select"
        ica_cfg = IcaConfig(1, cfg.contrast, cfg.ica_tol, cfg.ica_max_iter, cfg.ica_restarts)
        fit_cfg = FitConfig(cfg.head_l2, cfg.head_learning_rate, cfg.head_epochs)
        report = select_components(train_X, train_y, val_X, val_y, (cfg.n_min, cfg.n_max),
                                   cfg.epsilon, ica_cfg, fit_cfg, master_seed=cfg.seed)
        log.info("chose n=%d (kappa_full=%.4f)", report.chosen_n, report.kappa_full)

        stage = "normalize"
        model, head, kappa_ic = finalize_selection(report, train_X, train_y, val_X, val_y,
                                                   fit_cfg, cfg.seed)
        produced += write_selection_outputs(out, report, model, head, kappa_ic, train_X, cfg.seed)

        if fmap is not None:
            stage = "explain"
            images = cfg.images
            if not images:
                # first FMAP image of each class (FMAP image i is validation row i)
                y = val_y.values[: fmap.images]
                images = tuple(int(np.argmax(y == k)) for k in range(val_y.K) if np.any(y == k))
            for idx in images:
                produced += explain_image(model, head, fmap, idx, out, sigma_mode=cfg.sigma,
                                          arch=cfg.arch)

        if cfg.tsne:
            stage = "tsne"
            n_pts = min(cfg.tsne_max_points, val_X.rows)
            sub_y = val_y.values[:n_pts]
            tcfg = TsneConfig(perplexity=cfg.tsne_perplexity, iterations=cfg.tsne_iterations,
                              seed=derive_seed(cfg.seed, 4))
            for name, data in (("features", val_X.data[:n_pts]),
                               ("ics", transform(model, val_X.data[:n_pts]))):
                Y, _ = run_tsne(data, sub_y, tcfg)
                path = out / f"tsne_{name}.svg"
                embedding_to_svg(Y, sub_y, path)
                produced.append(path)
    except IcxError as exc:
        manifest = _write_manifest(out, produced, note=f"aborted at stage {stage}: {exc.category}")
        raise PipelineAborted(stage, exc, manifest) from exc
    return _write_manifest(out, produced)
