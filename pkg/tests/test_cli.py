import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from icx import io_formats as fio
from icx.cli import main
from icx.scoremap import read_pnm

SYNTH = ["--n-train", "1200", "--n-val", "600", "--m", "16", "--fmap-images", "12",
         "--height", "6", "--width", "6", "--seed", "3"]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(out)] + SYNTH) == 0
    return out


@pytest.fixture(scope="module")
def selected(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("select")
    d = data_dir
    code = main(["select", "--train-features", str(d / "train.fmat"), "--train-labels", str(d / "train.lbl"),
                 "--val-features", str(d / "val.fmat"), "--val-labels", str(d / "val.lbl"),
                 "--n-max", "5", "--out-dir", str(out), "--seed", "1"])
    assert code == 0
    return out


def pipeline_config(path, data_dir, out_dir, **overrides):
    keys = {
        "train_features": data_dir / "train.fmat",
        "train_labels": data_dir / "train.lbl",
        "val_features": data_dir / "val.fmat",
        "val_labels": data_dir / "val.lbl",
        "fmap": data_dir / "val.fmap",
        "out_dir": out_dir,
        "n_max": 5,
        "tsne_max_points": 60,
        "tsne_perplexity": 10,
        "tsne_iterations": 300,
        "seed": 2,
    }
    keys.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    return path


class TestUsage:
    def test_no_subcommand(self, capsys):
        code, _, err = run([], capsys)
        assert code == 1 and "usage:" in err

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(["frobnicate"], capsys)
        assert code == 1 and "usage:" in err

    def test_qwk_missing_flags(self, capsys):
        code, _, err = run(["qwk", "--labels", "a.lbl"], capsys)
        assert code == 1
        assert "usage:" in err and "--preds" in err


class TestSubcommands:
    def test_synth_outputs_and_determinism(self, data_dir, tmp_path):
        assert main(["synth", "--out-dir", str(tmp_path)] + SYNTH) == 0
        assert tree_bytes(tmp_path) == tree_bytes(data_dir)
        assert sorted(tree_bytes(tmp_path)) == ["train.fmat", "train.lbl", "truth.txt", "val.fmap",
                                                "val.fmat", "val.lbl"]

    def test_pca_report(self, data_dir, capsys):
        code, out, _ = run(["pca", "--features", data_dir / "train.fmat", "--thresholds", "0.9,0.99"], capsys)
        lines = out.splitlines()
        assert code == 0 and len(lines) == 2
        assert lines[0].startswith("threshold=0.900000 components=")

    def test_ica_deterministic(self, data_dir, tmp_path, capsys):
        for name in ("a", "b"):
            code, out, _ = run(["ica", "--features", data_dir / "train.fmat", "--labels", data_dir / "train.lbl",
                                "--n-components", "3", "--out", tmp_path / f"{name}.txt", "--seed", "4"], capsys)
            assert code == 0 and out.startswith("converged=yes")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_head_fit_and_eval(self, data_dir, selected, tmp_path, capsys):
        argv = ["head", "fit", "--features", data_dir / "train.fmat", "--labels", data_dir / "train.lbl",
                "--model", selected / "model.txt", "--epochs", "100"]
        assert run(argv + ["--out", tmp_path / "h1.txt"], capsys)[0] == 0
        assert run(argv + ["--out", tmp_path / "h2.txt"], capsys)[0] == 0
        assert (tmp_path / "h1.txt").read_bytes() == (tmp_path / "h2.txt").read_bytes()
        code, out, _ = run(["head", "eval", "--model", tmp_path / "h1.txt", "--features", data_dir / "val.fmat",
                            "--labels", data_dir / "val.lbl"], capsys)
        assert code == 0 and 0.0 < float(out) <= 1.0

    def test_qwk_identical_files(self, data_dir, capsys):
        code, out, _ = run(["qwk", "--labels", data_dir / "val.lbl", "--preds", data_dir / "val.lbl"], capsys)
        assert code == 0 and out.strip() == "1.000000"

    def test_qwk_constant_pair_undefined(self, tmp_path, capsys):
        fio.write_labels(fio.LabelVector(np.zeros(4), 3), tmp_path / "z.lbl")
        code, _, err = run(["qwk", "--labels", tmp_path / "z.lbl", "--preds", tmp_path / "z.lbl"], capsys)
        assert code == 2 and err.startswith("error: metric:")

    def test_select_outputs(self, selected, data_dir, tmp_path):
        assert sorted(tree_bytes(selected)) == ["model.txt", "selection.txt"]
        meta = fio.read_model(selected / "model.txt")["meta"]
        assert meta["n_components"] == 3
        code = main(["select", "--train-features", str(data_dir / "train.fmat"),
                     "--train-labels", str(data_dir / "train.lbl"), "--val-features", str(data_dir / "val.fmat"),
                     "--val-labels", str(data_dir / "val.lbl"), "--n-max", "5",
                     "--out-dir", str(tmp_path), "--seed", "1"])
        assert code == 0
        assert tree_bytes(tmp_path) == tree_bytes(selected)

    def test_explain_deterministic_and_marks_bump(self, data_dir, selected, tmp_path, capsys):
        truth = fio.read_text_sections(data_dir / "truth.txt")
        bumps = np.atleast_2d(next(s["bumps"] for s in truth.values() if "bumps" in s)).astype(int)
        img, y, x, _ = bumps[0]
        for name in ("a", "b"):
            code, out, _ = run(["explain", "--model", selected / "model.txt", "--fmap", data_dir / "val.fmap",
                                "--image", img, "--out-dir", tmp_path / name], capsys)
            assert code == 0
        assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
        masks = [read_pnm(p) for p in sorted((tmp_path / "a").glob("*_mask.pgm"))]
        assert len(masks) == 3
        assert any(m[y, x] == 255 for m in masks)

    def test_explain_bad_component(self, data_dir, selected, tmp_path, capsys):
        code, _, err = run(["explain", "--model", selected / "model.txt", "--fmap", data_dir / "val.fmap",
                            "--image", "0", "--component", "9", "--out-dir", tmp_path], capsys)
        assert code == 1 and "component 9" in err

    def test_tsne_deterministic(self, data_dir, tmp_path, capsys):
        argv = ["tsne", "--features", data_dir / "val.fmat", "--labels", data_dir / "val.lbl",
                "--max-points", "50", "--perplexity", "10", "--iterations", "300", "--seed", "5"]
        assert run(argv + ["--out", tmp_path / "a.svg"], capsys)[0] == 0
        assert run(argv + ["--out", tmp_path / "b.svg"], capsys)[0] == 0
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
        assert (tmp_path / "a.svg").read_text().count("<circle") == 50

    def test_format_error_reported(self, tmp_path, capsys):
        (tmp_path / "bad.fmat").write_bytes(b"XMAT" + bytes(40))
        code, _, err = run(["pca", "--features", tmp_path / "bad.fmat"], capsys)
        assert code == 1 and err.startswith("error: format:") and "XMAT" in err

    def test_missing_file_reported(self, tmp_path, capsys):
        code, _, err = run(["pca", "--features", tmp_path / "none.fmat"], capsys)
        assert code == 1 and "none.fmat" in err


class TestPipeline:
    @pytest.fixture(scope="class")
    @staticmethod
    def first_run(data_dir, tmp_path_factory):
        root = tmp_path_factory.mktemp("pipe")
        cfg = pipeline_config(root / "run.cfg", data_dir, root / "out")
        assert main(["pipeline", "--config", str(cfg)]) == 0
        return root / "out"

    def test_manifest_contents(self, first_run):
        lines = (first_run / "manifest.txt").read_text().splitlines()
        names = [line.split("  ", 1)[1] for line in lines]
        assert {"pca_report.txt", "selection.txt", "model.txt", "tsne_features.svg", "tsne_ics.svg"} <= set(names)
        tables = [n for n in names if n.endswith("_contributions.txt")]
        assert len(tables) == 5  # one per class
        n = fio.read_model(first_run / "model.txt")["meta"]["n_components"]
        for t in tables:
            stem = t.split("_")[0]
            assert len([x for x in names if x.startswith(stem) and x.endswith(".pgm")
                        and not x.endswith("_mask.pgm")]) == n
        for line in lines:
            digest, name = line.split("  ", 1)
            assert len(digest) == 64 and (first_run / name).is_file()

    def test_rerun_identical(self, first_run, data_dir, tmp_path):
        cfg = pipeline_config(tmp_path / "run.cfg", data_dir, tmp_path / "out")
        assert main(["pipeline", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "manifest.txt").read_bytes() == (first_run / "manifest.txt").read_bytes()

    def test_missing_labels_path(self, data_dir, tmp_path, capsys):
        cfg = pipeline_config(tmp_path / "run.cfg", data_dir, tmp_path / "out",
                              train_labels=tmp_path / "absent.lbl")
        code, _, err = run(["pipeline", "--config", cfg], capsys)
        assert code == 1 and "train_labels" in err
        assert not (tmp_path / "out").exists() or not any((tmp_path / "out").iterdir())

    def test_unknown_key(self, data_dir, tmp_path, capsys):
        cfg = pipeline_config(tmp_path / "run.cfg", data_dir, tmp_path / "out", bogus=1)
        code, _, err = run(["pipeline", "--config", cfg], capsys)
        assert code == 1 and "bogus" in err

    def test_writes_only_inside_out_dir(self, data_dir, tmp_path):
        shutil.copytree(data_dir, tmp_path / "data")
        before = tree_bytes(tmp_path / "data")
        cfg = pipeline_config(tmp_path / "run.cfg", tmp_path / "data", tmp_path / "out", tsne="false")
        cwd = os.getcwd()
        os.chdir(tmp_path)
        try:
            assert main(["pipeline", "--config", str(cfg)]) == 0
        finally:
            os.chdir(cwd)
        assert tree_bytes(tmp_path / "data") == before
        assert sorted(p.name for p in tmp_path.iterdir()) == ["data", "out", "run.cfg"]
