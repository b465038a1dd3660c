"""``icx`` command-line front-end.

Exit status: 0 success, 1 bad input (usage, format, validation), 2 numerical
failure (divergence, rank deficiency, undefined metric).  Errors go to
stderr as a single ``error: <category>: <detail>`` line.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io_formats as fio
from .embed import TsneConfig, embedding_to_svg, run_tsne
from .errors import IcxError, ValidationError
from .ica import IcaConfig, fit_ica, transform
from .metrics import confusion, qwk
from .ordinal_head import FitConfig, evaluate, fit_head
from .pca import explained_variance_report, fit_pca
from .pipeline import (
    PipelineAborted,
    PipelineConfig,
    explain_image,
    finalize_selection,
    head_inputs,
    load_bundle,
    run_pipeline,
    save_bundle,
    write_selection_outputs,
)
from .selection import report_to_text, select_components
from .synthetic import SourceSpec, ground_truth_sections, plant_dataset, plant_spatial


class UsageError(Exception):
    def __init__(self, message, usage):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _add_ica_opts(p):
    p.add_argument("--contrast", choices=("logcosh", "exp"), default="logcosh")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--restarts", type=int, default=3)


def _add_head_opts(p):
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--no-standardize", action="store_true")


def _head_cfg(args):
    return FitConfig(args.l2, args.lr, args.epochs, args.seed, not args.no_standardize)


def build_parser():
    parser = _Parser(prog="icx", description="Independent-component explanations of linear-head classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a planted dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-sources", type=int, default=3)
    p.add_argument("--distributions", default=None,
                   help="comma list of laplace/uniform/gaussian (default alternates laplace, uniform)")
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--n-train", type=int, default=4000)
    p.add_argument("--n-val", type=int, default=2000)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--label-noise", type=float, default=0.2)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--fmap-images", type=int, default=0,
                   help="write spatial maps for the first N validation rows")
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--lesions", type=int, default=1)
    p.add_argument("--amplitude", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pca", help="explained-variance report")
    p.add_argument("--features", required=True)
    p.add_argument("--thresholds", type=_floats, default=(0.9, 0.99))

    p = sub.add_parser("ica", help="fit FastICA")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--n-components", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_ica_opts(p)

    p = sub.add_parser("head", help="fit or evaluate a linear head")
    hsub = p.add_subparsers(dest="head_command", parser_class=_Parser)
    hsub.required = True
    hf = hsub.add_parser("fit")
    hf.add_argument("--features", required=True)
    hf.add_argument("--labels", required=True)
    hf.add_argument("--model", help="model file with [ica]; fit on its components")
    hf.add_argument("--out", required=True)
    hf.add_argument("--seed", type=int, default=0)
    _add_head_opts(hf)
    he = hsub.add_parser("eval")
    he.add_argument("--model", required=True)
    he.add_argument("--features", required=True)
    he.add_argument("--labels", required=True)

    p = sub.add_parser("qwk", help="quadratic weighted kappa of two label files")
    p.add_argument("--labels", required=True)
    p.add_argument("--preds", required=True)

    p = sub.add_parser("select", help="sweep the number of components")
    p.add_argument("--train-features", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--val-features", required=True)
    p.add_argument("--val-labels", required=True)
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=0.015)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_ica_opts(p)
    _add_head_opts(p)

    p = sub.add_parser("explain", help="score maps for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--fmap", required=True)
    p.add_argument("--image", type=int, required=True)
    p.add_argument("--component", default="all")
    p.add_argument("--sigma", choices=("per-image", "global"), default="per-image")
    p.add_argument("--threshold", choices=("negative", "symmetric"), default="negative")
    p.add_argument("--arch", default="blocks:3",
                   help='"blocks", "blocks:B" or "k:s:p,..." (default: first three blocks)')
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("tsne", help="2-D t-SNE scatter as SVG")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="embed the model's independent components instead")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--max-points", type=int, default=0, help="use only the first N rows (0 = all)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pipeline", help="run the whole procedure from a config file")
    p.add_argument("--config", required=True)
    return parser


def _ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)


def _ensure_parent(path):
    parent = Path(path).parent
    if str(parent):
        parent.mkdir(parents=True, exist_ok=True)


def cmd_synth(args):
    dists = args.distributions.split(",") if args.distributions else [
        ("laplace", "uniform")[i % 2] for i in range(args.n_sources)
    ]
    spec = SourceSpec(args.n_sources, tuple(dists), seed=args.seed)
    total = args.n_train + args.n_val
    ds = plant_dataset(spec, total, args.m, args.noise, args.classes, args.seed,
                       label_noise=args.label_noise)
    out = Path(args.out_dir)
    _ensure_dir(out)
    X, y = ds.features.data, ds.labels.values
    fio.write_feature_matrix(X[: args.n_train], out / "train.fmat")
    fio.write_labels(fio.LabelVector(y[: args.n_train], args.classes), out / "train.lbl")
    fio.write_feature_matrix(X[args.n_train:], out / "val.fmat")
    fio.write_labels(fio.LabelVector(y[args.n_train:], args.classes), out / "val.lbl")
    fmap = None
    if args.fmap_images > 0:
        n_img = min(args.fmap_images, args.n_val)
        fmap = plant_spatial(ds, args.height, args.width, args.lesions, seed=args.seed,
                             amplitude=args.amplitude,
                             indices=np.arange(args.n_train, args.n_train + n_img))
        fio.write_spatial_map(fmap, out / "val.fmap")
    fio.write_text_sections(ground_truth_sections(ds, fmap), out / "truth.txt")
    print(f"wrote planted dataset to {out}")


def cmd_pca(args):
    model = fit_pca(fio.read_feature_matrix(args.features))
    for t, k in explained_variance_report(model, args.thresholds):
        print("threshold=%.6f components=%d" % (t, k))


def cmd_ica(args):
    X = fio.read_feature_matrix(args.features)
    labels = fio.read_labels(args.labels) if args.labels else None
    cfg = IcaConfig(args.n_components, args.contrast, args.tol, args.max_iter, args.restarts, args.seed)
    model = fit_ica(X, cfg, labels)
    _ensure_parent(args.out)
    save_bundle(args.out, pca=fit_pca(X), ica=model, meta={"seed": args.seed})
    print("converged=%s iterations=%d gaussian_warning=%s"
          % ("yes" if model.converged else "no", model.n_iter,
             "yes" if model.gaussian_warning else "no"))


def cmd_head(args):
    if args.head_command == "eval":
        bundle = load_bundle(args.model)
        if bundle["head"] is None:
            raise ValidationError(f"{args.model} has no [head] section")
        X = fio.read_feature_matrix(args.features)
        y = fio.read_labels(args.labels)
        print("%.6f" % evaluate(bundle["head"], head_inputs(bundle, X), y))
        return
    X = fio.read_feature_matrix(args.features)
    y = fio.read_labels(args.labels)
    bundle = load_bundle(args.model) if args.model else {"pca": None, "ica": None, "meta": {}}
    if bundle["ica"] is not None:
        inputs, kind = transform(bundle["ica"], X), "independent_components"
    else:
        inputs, kind = X.data, "features"
    head = fit_head(inputs, y, _head_cfg(args), input_kind=kind)
    _ensure_parent(args.out)
    save_bundle(args.out, pca=bundle["pca"], ica=bundle["ica"], head=head,
                meta={**bundle["meta"], "seed": args.seed})
    print("train_kappa=%.6f" % evaluate(head, inputs, y))


def cmd_qwk(args):
    y = fio.read_labels(args.labels)
    p = fio.read_labels(args.preds)
    if y.K != p.K:
        raise ValidationError(f"label files disagree on K ({y.K} vs {p.K})")
    print("%.6f" % qwk(confusion(y, p)))


def cmd_select(args):
    tx, ty = fio.read_feature_matrix(args.train_features), fio.read_labels(args.train_labels)
    vx, vy = fio.read_feature_matrix(args.val_features), fio.read_labels(args.val_labels)
    ica_cfg = IcaConfig(1, args.contrast, args.tol, args.max_iter, args.restarts)
    fit_cfg = _head_cfg(args)
    report = select_components(tx, ty, vx, vy, (args.n_min, args.n_max), args.epsilon,
                               ica_cfg, fit_cfg, master_seed=args.seed)
    model, head, kappa_ic = finalize_selection(report, tx, ty, vx, vy, fit_cfg, args.seed)
    _ensure_dir(args.out_dir)
    write_selection_outputs(args.out_dir, report, model, head, kappa_ic, tx, args.seed)
    sys.stdout.write(report_to_text(report))


def cmd_explain(args):
    bundle = load_bundle(args.model)
    if bundle["ica"] is None:
        raise ValidationError(f"{args.model} has no [ica] section")
    fmap = fio.read_spatial_map(args.fmap)
    n = bundle["ica"].n_components
    if args.component == "all":
        comps = list(range(n))
    else:
        try:
            comps = [int(args.component)]
        except ValueError:
            raise ValidationError(f"--component must be an index or 'all', got {args.component!r}") from None
        if not 0 <= comps[0] < n:
            raise ValidationError(f"component {comps[0]} outside 0..{n - 1}")
    _ensure_dir(args.out_dir)
    paths = explain_image(bundle["ica"], bundle["head"], fmap, args.image, args.out_dir,
                          components=comps, sigma_mode=args.sigma.replace("-", "_"),
                          arch=args.arch, mode=args.threshold)
    for p in paths:
        print(p)


def cmd_tsne(args):
    X = fio.read_feature_matrix(args.features).data
    y = fio.read_labels(args.labels).values
    if args.max_points:
        X, y = X[: args.max_points], y[: args.max_points]
    if args.model:
        bundle = load_bundle(args.model)
        if bundle["ica"] is None:
            raise ValidationError(f"{args.model} has no [ica] section")
        X = transform(bundle["ica"], X)
    cfg = TsneConfig(perplexity=args.perplexity, iterations=args.iterations, seed=args.seed)
    Y, trace = run_tsne(X, y, cfg)
    _ensure_parent(args.out)
    embedding_to_svg(Y, y, args.out)
    print("final_kl=%.6f" % trace[-1])


def cmd_pipeline(args):
    cfg = PipelineConfig.from_file(args.config)
    try:
        manifest = run_pipeline(cfg)
    except PipelineAborted as exc:
        raise exc.error from exc
    print(manifest)


COMMANDS = {
    "synth": cmd_synth,
    "pca": cmd_pca,
    "ica": cmd_ica,
    "head": cmd_head,
    "qwk": cmd_qwk,
    "select": cmd_select,
    "explain": cmd_explain,
    "tsne": cmd_tsne,
    "pipeline": cmd_pipeline,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"error: usage: {exc}\n")
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except IcxError as exc:
        detail = " ".join(str(exc).split())
        sys.stderr.write(f"error: {exc.category}: {detail}\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
