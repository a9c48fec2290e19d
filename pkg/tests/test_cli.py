import json
import subprocess
import sys
import time

import numpy as np
import pytest

from oodkit import __version__, density, metrics, tensor_io
from oodkit.cli import main

from test_metrics import HAND_A, HAND_B, IMG_A, IMG_B, MASK_A, MASK_B


def run(*argv):
    return main([str(a) for a in argv])


def pipeline(root, seed=0):
    """gen -> train-toy -> predict -> fit/score -> eval on a small mixture, entirely via the CLI."""
    d = root
    mix = ["--classes", 6, "--dim", 8, "--pairs", 1, "--layout-seed", seed]
    assert run("gen", "mixture", *mix, "--per-class", 60, "--seed", seed, "--out-dir", d / "train") == 0
    assert run("gen", "mixture", *mix, "--per-class", 20, "--seed", seed + 1, "--out-dir", d / "test") == 0
    assert run("gen", "ood-mixture", *mix, "--count", 100, "--seed", seed + 2, "--out-dir", d / "ood") == 0
    assert run("train-toy", "--features", d / "train/features.oodt", "--labels", d / "train/classes.oodt",
               "--hidden", "16", "--epochs", 5, "--seed", seed, "--out", d / "clf.oodm") == 0
    for part in ("train", "test", "ood"):
        src = d / part / ("ood.oodt" if part == "ood" else "features.oodt")
        assert run("predict", "--model", d / "clf.oodm", "--features", src, "--out", d / f"{part}_logits.oodt") == 0
    assert run("fit", "klmatch", "--val-logits", d / "train_logits.oodt", "--out", d / "tpl.oodm") == 0
    assert run("fit", "iforest", "--train", d / "train_logits.oodt", "--trees", 20, "--seed", seed,
               "--out", d / "if.oodm") == 0
    assert run("fit", "lof", "--train", d / "train_logits.oodt", "--out", d / "lof.oodm") == 0
    tensor_io.write_labels(np.zeros(120, dtype=np.uint8), d / "test_labels.oodt")
    tensor_io.write_labels(np.ones(100, dtype=np.uint8), d / "ood_labels.oodt")
    for part in ("test", "ood"):
        logits = d / f"{part}_logits.oodt"
        for name, extra in [("msp", []), ("maxlogit", []), ("klmatch", ["--templates", d / "tpl.oodm"]),
                            ("iforest", ["--fitted", d / "if.oodm"]), ("lof", ["--fitted", d / "lof.oodm"])]:
            assert run("score", name, "--logits", logits, *extra, "--out", d / f"{part}_{name}.oodt") == 0
    for name in ("msp", "maxlogit", "klmatch", "iforest", "lof"):
        assert run("eval", "--scores", d / f"test_{name}.oodt", d / f"ood_{name}.oodt",
                   "--labels", d / "test_labels.oodt", d / "ood_labels.oodt", "--out", d / f"report_{name}.json") == 0
    return d


def artifacts(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and not p.name.endswith(".manifest.json")}


class TestGen:
    def test_gaussian_shape(self, tmp_path):
        assert run("gen", "gaussian", "--count", 100, "--shape", "32x32", "--seed", 7, "--out-dir", tmp_path) == 0
        t = tensor_io.read_tensor(tmp_path / "gaussian.oodt")
        assert t.shape == (100, 32, 32)
        manifest = json.loads((tmp_path / "gaussian.manifest.json").read_text())
        assert manifest["seed"] == 7 and manifest["subcommand"] == "gen"
        assert {"duration_seconds", "tool_version", "format_version", "parameters"} <= set(manifest)

    @pytest.mark.parametrize("name", ["gaussian", "rademacher", "blobs"])
    def test_deterministic(self, tmp_path, name):
        for d in ("a", "b"):
            assert run("gen", name, "--count", 5, "--shape", "16x16", "--seed", 3, "--out-dir", tmp_path / d) == 0
        assert (tmp_path / "a" / f"{name}.oodt").read_bytes() == (tmp_path / "b" / f"{name}.oodt").read_bytes()

    def test_unknown_generator(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("gen", "bogus")
        assert exc.value.code == 2
        err = capsys.readouterr().err
        assert "gaussian" in err and "blobs" in err

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OODKIT_OUT_DIR", str(tmp_path))
        assert run("gen", "rademacher", "--count", 2, "--shape", "4x4") == 0
        assert (tmp_path / "rademacher.oodt").exists()

    def test_multilabel(self, tmp_path):
        assert run("gen", "multilabel", "--classes", 5, "--dim", 8, "--pairs", 0, "--count", 30,
                   "--out-dir", tmp_path) == 0
        assert tensor_io.read_tensor(tmp_path / "targets.oodt").shape == (30, 5)

    def test_invalid_mixture_exits_2(self, tmp_path):
        assert run("gen", "mixture", "--classes", 20, "--dim", 16, "--pairs", 0, "--out-dir", tmp_path) == 2


class TestTrain:
    @pytest.fixture
    def data(self, tmp_path):
        assert run("gen", "mixture", "--classes", 3, "--dim", 4, "--pairs", 0, "--per-class", 30,
                   "--out-dir", tmp_path) == 0
        return tmp_path

    def test_trace_has_every_epoch(self, data):
        assert run("train-toy", "--features", data / "features.oodt", "--labels", data / "classes.oodt",
                   "--hidden", "8", "--epochs", 7, "--out", data / "m.oodm") == 0
        trace = json.loads((data / "m.oodm.trace.json").read_text())
        assert len(trace["epochs"]) == 7 and "initial_loss" in trace

    def test_same_seed_same_model(self, data):
        for name in ("a", "b"):
            assert run("train-toy", "--features", data / "features.oodt", "--labels", data / "classes.oodt",
                       "--hidden", "8", "--epochs", 3, "--seed", 5, "--out", data / f"{name}.oodm") == 0
        assert (data / "a.oodm").read_bytes() == (data / "b.oodm").read_bytes()

    def test_confidence_trace(self, data):
        assert run("train-toy", "--features", data / "features.oodt", "--labels", data / "classes.oodt",
                   "--hidden", "8", "--epochs", 2, "--confidence", "--out", data / "c.oodm") == 0
        trace = json.loads((data / "c.oodm.trace.json").read_text())
        assert trace["batches"][0]["lambda_before"] == 0.1
        assert run("score", "branch", "--model", data / "c.oodm", "--features", data / "features.oodt",
                   "--out", data / "s.oodt") == 0
        s = tensor_io.read_tensor(data / "s.oodt")
        assert s.shape == (90,) and np.all((s > 0) & (s < 1))

    def test_autoencoder(self, data):
        assert run("train-toy", "--autoencoder", "--features", data / "features.oodt", "--bottleneck", 2,
                   "--hidden", "", "--epochs", 3, "--out", data / "ae.oodm") == 0
        assert run("score", "recon", "--model", data / "ae.oodm", "--features", data / "features.oodt",
                   "--out", data / "r.oodt") == 0
        assert tensor_io.read_tensor(data / "r.oodt").shape == (90,)

    def test_missing_input(self, tmp_path):
        assert run("train-toy", "--features", tmp_path / "nope.oodt", "--labels", tmp_path / "nope2.oodt",
                   "--out", tmp_path / "m.oodm") == 2

    def test_divergence_exit_3(self, data, capsys):
        x = tensor_io.read_tensor(data / "features.oodt") * 1e4
        tensor_io.write_tensor(x, data / "big.oodt")
        with np.errstate(all="ignore"):
            code = run("train-toy", "--features", data / "big.oodt", "--labels", data / "classes.oodt",
                       "--hidden", "8", "--lr", 1e6, "--epochs", 10, "--out", data / "m.oodm")
        assert code == 3
        assert "epoch" in capsys.readouterr().err


class TestScore:
    def test_maxlogit_definition(self, tmp_path):
        z = np.random.default_rng(0).normal(size=(10, 4)).astype(np.float32)
        tensor_io.write_tensor(z, tmp_path / "l.oodt")
        assert run("score", "maxlogit", "--logits", tmp_path / "l.oodt", "--out", tmp_path / "s.oodt") == 0
        np.testing.assert_array_equal(tensor_io.read_tensor(tmp_path / "s.oodt"), -z.max(1))

    def test_klmatch_requires_templates(self, tmp_path, capsys):
        tensor_io.write_tensor(np.zeros((2, 3)), tmp_path / "l.oodt")
        assert run("score", "klmatch", "--logits", tmp_path / "l.oodt", "--out", tmp_path / "s.oodt") == 2
        assert "--templates" in capsys.readouterr().err

    def test_fit_klmatch_rows(self, tmp_path):
        tensor_io.write_tensor(np.random.default_rng(1).normal(size=(40, 5)), tmp_path / "v.oodt")
        assert run("fit", "klmatch", "--val-logits", tmp_path / "v.oodt", "--out", tmp_path / "t.oodm") == 0
        from oodkit.cli import load_templates
        assert load_templates(tmp_path / "t.oodm").templates.shape == (5, 5)

    def test_lof_default_k(self, tmp_path):
        tensor_io.write_tensor(np.random.default_rng(2).normal(size=(50, 2)), tmp_path / "t.oodt")
        assert run("fit", "lof", "--train", tmp_path / "t.oodt", "--out", tmp_path / "lof.oodm") == 0
        assert density.LofModel.load(tmp_path / "lof.oodm").k == 20

    def test_iforest_refit_identical(self, tmp_path):
        tensor_io.write_tensor(np.random.default_rng(3).normal(size=(300, 3)), tmp_path / "t.oodt")
        for name in ("a", "b"):
            assert run("fit", "iforest", "--train", tmp_path / "t.oodt", "--seed", 9,
                       "--out", tmp_path / f"{name}.oodm") == 0
        assert (tmp_path / "a.oodm").read_bytes() == (tmp_path / "b.oodm").read_bytes()

    def test_segmentation_scorers(self, tmp_path):
        rng = np.random.default_rng(4)
        stack = rng.dirichlet(np.ones(3), size=(4, 5, 6)).astype(np.float32)
        tensor_io.write_tensor(stack, tmp_path / "stack.oodt")
        tensor_io.write_tensor(stack[0], tmp_path / "post.oodt")
        assert run("score", "dropoutvar", "--stack", tmp_path / "stack.oodt", "--out", tmp_path / "v.oodt") == 0
        assert run("score", "background", "--posteriors", tmp_path / "post.oodt", "--background-index", 1,
                   "--out", tmp_path / "b.oodt") == 0
        assert tensor_io.read_tensor(tmp_path / "v.oodt").shape == (5, 6)
        np.testing.assert_array_equal(tensor_io.read_tensor(tmp_path / "b.oodt"), stack[0][..., 1])

    def test_corrupt_input_exit_2(self, tmp_path):
        (tmp_path / "l.oodt").write_bytes(b"OODX" + bytes(12))
        assert run("score", "msp", "--logits", tmp_path / "l.oodt", "--out", tmp_path / "s.oodt") == 2


class TestEval:
    def test_perfect_separation(self, tmp_path, capsys):
        tensor_io.write_tensor([0.1, 0.2, 0.8, 0.9], tmp_path / "s.oodt")
        tensor_io.write_labels([0, 0, 1, 1], tmp_path / "y.oodt")
        assert run("eval", "--scores", tmp_path / "s.oodt", "--labels", tmp_path / "y.oodt",
                   "--curves", tmp_path / "curves") == 0
        report = json.loads(capsys.readouterr().out)
        assert (report["auroc"], report["aupr"], report["fpr_at_recall"]) == (1.0, 1.0, 0.0)
        assert (tmp_path / "curves/roc.csv").exists() and (tmp_path / "curves/pr.csv").exists()

    def test_single_class_exit_4(self, tmp_path):
        tensor_io.write_tensor([0.1, 0.2], tmp_path / "s.oodt")
        tensor_io.write_labels([1, 1], tmp_path / "y.oodt")
        assert run("eval", "--scores", tmp_path / "s.oodt", "--labels", tmp_path / "y.oodt") == 4

    def test_segmentation_fixture(self, tmp_path, capsys):
        tensor_io.write_tensor(np.stack([IMG_A, IMG_B]), tmp_path / "maps.oodt")
        tensor_io.write_labels(np.stack([MASK_A, MASK_B]), tmp_path / "masks.oodt")
        assert run("eval", "--segmentation", "--scores", tmp_path / "maps.oodt",
                   "--labels", tmp_path / "masks.oodt") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["auroc"] == (HAND_A[0] + HAND_B[0]) / 2
        assert report["aupr"] == (HAND_A[1] + HAND_B[1]) / 2
        assert report["fpr_at_recall"] == (HAND_A[2] + HAND_B[2]) / 2

    def test_shape_mismatch_exit_2(self, tmp_path):
        tensor_io.write_tensor([0.1, 0.2, 0.3], tmp_path / "s.oodt")
        tensor_io.write_labels([0, 1], tmp_path / "y.oodt")
        assert run("eval", "--scores", tmp_path / "s.oodt", "--labels", tmp_path / "y.oodt") == 2


class TestPipeline:
    def test_byte_identical_rerun(self, tmp_path):
        a = artifacts(pipeline(tmp_path / "a"))
        b = artifacts(pipeline(tmp_path / "b"))
        assert a.keys() == b.keys() and len(a) > 20
        assert [k for k in a if a[k] != b[k]] == []

    def test_report_sane_and_fast(self, tmp_path):
        start = time.perf_counter()
        d = pipeline(tmp_path)
        assert time.perf_counter() - start < 60
        report = json.loads((d / "report_maxlogit.json").read_text())
        assert report["positives"] == 100 and report["negatives"] == 120
        s = np.r_[tensor_io.read_tensor(d / "test_maxlogit.oodt"), tensor_io.read_tensor(d / "ood_maxlogit.oodt")]
        assert report["auroc"] == metrics.auroc(s, np.r_[np.zeros(120), np.ones(100)])


def test_demo_table(tmp_path, monkeypatch):
    import oodkit.benchmarks as bm

    small = bm.BenchmarkConfig(class_count=6, feature_dim=8, fine_grained_pairs=1, per_class_train=40,
                               per_class_val=10, per_class_test=10, ood_count=50, hidden=(16,), epochs=3)
    monkeypatch.setattr(bm, "run_fine_grained", lambda seed, cfg=small, _f=bm.run_fine_grained: _f(seed, cfg))
    assert run("demo", "--seeds", 2, "--out-dir", tmp_path) == 0
    lines = (tmp_path / "demo_table.md").read_text().splitlines()
    rows = [ln for ln in lines if ln.startswith("| ") and not ln.startswith("| detector")]
    assert [r.split("|")[1].strip() for r in rows] == list(bm.FINE_GRAINED_DETECTORS)
    assert lines[2] == "| detector | AUROC | AUPR | FPR95 |"
    csv_lines = (tmp_path / "demo_table.csv").read_text().splitlines()
    assert len(csv_lines) == 1 + 6 * 2 + 6


def test_version_subprocess():
    out = subprocess.run([sys.executable, "-m", "oodkit.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert __version__ in out.stdout and "OODT" in out.stdout
