"""End-to-end tests for the command-line interface.

Each test drives ``cli.main`` in-process with stdout/stderr redirected, so
exit codes and printed lines are asserted without spawning subprocesses.
"""

import contextlib
import hashlib
import io
import os
import shutil

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from poseact import aggregate as agg_mod
from poseact import cli, config, embed, flowprep, learn, partcrop
from poseact.errors import ValidationError


def _run(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        rc = cli.main(argv)
    return rc, out.getvalue(), err.getvalue()


def _run_ok(argv):
    rc, out, err = _run(argv)
    assert rc == 0, f"{argv} failed rc={rc}: {err}"
    return out


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared workspace: synthetic data pushed through the linear pipeline."""
    root = tmp_path_factory.mktemp("cli_ws")
    paths = {
        "root": root,
        "data": root / "data",
        "manifest": root / "data" / "manifest.txt",
        "store": root / "store.pcnf",
        "feats": root / "feats",
        "model": root / "model.psvm",
        "scores": root / "scores.tsv",
    }
    lines = {}
    lines["make"] = _run_ok([
        "make-synthetic", "--out", str(paths["data"]),
        "--train-per-class", "3", "--test-per-class", "2",
        "--frames", "6", "--seed", "0",
    ])
    lines["extract"] = _run_ok([
        "extract-series", "--manifest", str(paths["manifest"]),
        "--out", str(paths["store"]),
        "--provider", "test_embedder", "--dim", "16", "--patch-side", "32",
    ])
    lines["aggregate"] = _run_ok([
        "aggregate", "--manifest", str(paths["manifest"]),
        "--store", str(paths["store"]), "--out", str(paths["feats"]),
    ])
    lines["train"] = _run_ok([
        "train", "--manifest", str(paths["manifest"]),
        "--features", str(paths["feats"]), "--out", str(paths["model"]),
        "--kind", "linear",
    ])
    lines["score"] = _run_ok([
        "score", "--manifest", str(paths["manifest"]),
        "--features", str(paths["feats"]), "--model", str(paths["model"]),
        "--out", str(paths["scores"]),
    ])
    paths["lines"] = lines
    return paths


class TestParsing:
    def test_no_arguments_prints_help(self):
        rc, out, _ = _run([])
        assert rc == 1
        assert "usage:" in out

    def test_unknown_command_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            _run(["no-such-command"])
        assert exc.value.code == 1

    def test_unknown_flag_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            _run(["selfcheck", "--bogus-flag"])
        assert exc.value.code == 1

    def test_parse_parts_counts(self):
        cfg = config.Config()
        assert cli._parse_parts("5", cfg) == partcrop.PART_ORDER
        assert cli._parse_parts("4", cfg) == partcrop.UPPER_BODY_PARTS
        assert cli._parse_parts(None, cfg) == partcrop.PART_ORDER

    def test_parse_parts_names(self):
        got = cli._parse_parts("left_hand, full_image", config.Config())
        assert got == ("left_hand", "full_image")

    def test_parse_parts_config_fallback(self):
        cfg = config.Config({"crop.parts": "4"})
        assert cli._parse_parts(None, cfg) == partcrop.UPPER_BODY_PARTS

    def test_parse_parts_rejects_unknown(self):
        with pytest.raises(ValidationError):
            cli._parse_parts("torso", config.Config())

    def test_parse_parts_rejects_empty(self):
        with pytest.raises(ValidationError):
            cli._parse_parts(" , ", config.Config())

    def test_parse_pyramid_default(self):
        from poseact.fvenc import DEFAULT_PYRAMID

        assert cli._parse_pyramid(None, config.Config()) == DEFAULT_PYRAMID

    def test_parse_pyramid_levels(self):
        assert cli._parse_pyramid("1x1,1x3", config.Config()) == ((1, 1), (1, 3))
        assert cli._parse_pyramid("2X2", config.Config()) == ((2, 2),)

    def test_parse_pyramid_config_fallback(self):
        cfg = config.Config({"fv.pyramid": "1x2"})
        assert cli._parse_pyramid(None, cfg) == ((1, 2),)

    def test_parse_pyramid_rejects_bad_tokens(self):
        for bad in ("3", "axb", ""):
            with pytest.raises(ValidationError):
                cli._parse_pyramid(bad, config.Config())


class TestErrorCodes:
    def test_validation_error_returns_1(self, tmp_path):
        rc, _, err = _run(["aggregate", "--store", str(tmp_path / "nothing.pcnf")])
        assert rc == 1
        assert err.startswith("error:")
        assert "together" in err

    def test_missing_input_returns_2(self, tmp_path):
        rc, _, err = _run([
            "quantize-flow", "--input", str(tmp_path / "missing.flw"),
            "--out", str(tmp_path / "x.png"),
        ])
        assert rc == 2
        assert err.startswith("i/o error:")

    def test_bad_jobs_returns_1(self, ws, tmp_path):
        rc, _, err = _run([
            "extract-series", "--manifest", str(ws["manifest"]),
            "--out", str(tmp_path / "s.pcnf"), "--jobs", "0",
        ])
        assert rc == 1
        assert "--jobs" in err


class TestLayoutPreview:
    def test_default_preview_totals(self):
        out = _run_ok(["aggregate"])
        assert "total dimensions: 163840" in out

    def test_flags_shape_the_preview(self):
        out = _run_ok([
            "aggregate", "--dim", "8", "--scheme", "max",
            "--streams", "appearance", "--parts", "4",
        ])
        assert "total dimensions: 32" in out

    def test_config_file_drives_preview(self, tmp_path):
        cfg_path = tmp_path / "cli.cfg"
        config.write_config(str(cfg_path), config.Config({
            "agg.scheme": "max", "agg.dim": "8",
            "agg.streams": "appearance", "crop.parts": "4",
        }))
        out = _run_ok(["aggregate", "--config", str(cfg_path)])
        assert "total dimensions: 32" in out
        out = _run_ok(["aggregate", "--config", str(cfg_path), "--scheme", "max_min"])
        assert "total dimensions: 64" in out


class TestQuantizeFlow:
    def test_single_file(self, ws, tmp_path):
        src = ws["data"] / "flow" / "walk000" / "f000.flw"
        out_png = tmp_path / "one.png"
        out = _run_ok(["quantize-flow", "--input", str(src), "--out", str(out_png)])
        assert "quantized 1 flow field(s)" in out
        from PIL import Image

        expected = flowprep.quantize_flow(flowprep.read_flow(str(src)))
        assert_array_equal(np.asarray(Image.open(out_png)), expected.data)

    def test_directory_mode(self, ws, tmp_path):
        out_dir = tmp_path / "qdir"
        out = _run_ok([
            "quantize-flow", "--input", str(ws["data"] / "flow" / "walk000"),
            "--out", str(out_dir),
        ])
        assert "quantized 5 flow field(s)" in out
        assert sorted(os.listdir(out_dir)) == [f"f{t:03d}.png" for t in range(5)]


class TestCropParts:
    def test_writes_one_patch_per_part_and_frame(self, ws, tmp_path):
        out_dir = tmp_path / "patches"
        out = _run_ok([
            "crop-parts", "--poses", str(ws["data"] / "poses" / "walk000.txt"),
            "--frames", str(ws["data"] / "frames" / "walk000"),
            "--out", str(out_dir), "--patch-side", "16",
        ])
        assert "wrote 30 patches to" in out
        names = sorted(os.listdir(out_dir))
        assert len(names) == 30
        assert "f000_right_hand.png" in names
        from PIL import Image

        with Image.open(out_dir / "f002_full_image.png") as image:
            assert image.size == (16, 16)

    def test_frame_pose_count_mismatch(self, ws, tmp_path):
        short = tmp_path / "short_frames"
        short.mkdir()
        src = ws["data"] / "frames" / "walk000"
        for name in sorted(os.listdir(src))[:2]:
            shutil.copy(src / name, short / name)
        rc, _, err = _run([
            "crop-parts", "--poses", str(ws["data"] / "poses" / "walk000.txt"),
            "--frames", str(short), "--out", str(tmp_path / "p"),
        ])
        assert rc == 1
        assert "2 frames but 6 poses" in err


class TestEmbedImport:
    def test_round_trip(self, tmp_path):
        dump = tmp_path / "dump.txt"
        dump.write_text(
            "# comment line\n"
            "v0 0 full_image appearance 1.0 2.0\n"
            "v0 0 full_image flow 0.5 0.25\n"
        )
        out_path = tmp_path / "s.pcnf"
        out = _run_ok([
            "embed-import", "--input", str(dump), "--out", str(out_path), "--dim", "2",
        ])
        assert f"imported 2 descriptors into {out_path}" in out
        store = embed.FileStore.load(str(out_path))
        assert store.dim == 2
        assert_array_equal(
            store.describe(None, ("v0", 0, "full_image", "flow")), [0.5, 0.25]
        )

    @pytest.mark.parametrize(
        "line,fragment",
        [
            ("v0 0 full_image appearance 1.0", "expected 6"),
            ("v0 0 torso appearance 1.0 2.0", "unknown part"),
            ("v0 0 full_image sideways 1.0 2.0", "unknown stream"),
            ("v0 0 full_image appearance 1.0 oops", "non-numeric"),
            ("# nothing else", "no descriptor lines"),
        ],
    )
    def test_rejects_malformed_dump(self, tmp_path, line, fragment):
        dump = tmp_path / "dump.txt"
        dump.write_text(line + "\n")
        rc, _, err = _run([
            "embed-import", "--input", str(dump),
            "--out", str(tmp_path / "s.pcnf"), "--dim", "2",
        ])
        assert rc == 1
        assert fragment in err


class TestPipeline:
    def test_stage_summaries(self, ws):
        lines = ws["lines"]
        assert "wrote synthetic dataset manifest" in lines["make"]
        assert "wrote 600 frame descriptors" in lines["extract"]
        assert "wrote 10 descriptors (640 dims)" in lines["aggregate"]
        assert "trained linear model on 6 videos" in lines["train"]
        assert "scored 4 videos" in lines["score"]

    def test_aggregate_artifacts(self, ws):
        names = sorted(os.listdir(ws["feats"]))
        assert "normalizer.txt" in names
        pcnv = [n for n in names if n.endswith(".pcnv")]
        assert len(pcnv) == 10
        desc = agg_mod.read_descriptor(str(ws["feats"] / "walk000.pcnv"))
        assert desc.dim == 640

    def test_scores_cover_test_subset(self, ws):
        matrix = learn.read_scores(str(ws["scores"]))
        assert len(matrix.video_ids) == 4
        assert matrix.classes == ("walk", "wave")

    def test_score_subset_selection(self, ws, tmp_path):
        out = _run_ok([
            "score", "--manifest", str(ws["manifest"]),
            "--features", str(ws["feats"]), "--model", str(ws["model"]),
            "--out", str(tmp_path / "all.tsv"), "--subset", "all",
        ])
        assert "scored 10 videos" in out
        out = _run_ok([
            "score", "--manifest", str(ws["manifest"]),
            "--features", str(ws["feats"]), "--model", str(ws["model"]),
            "--out", str(tmp_path / "train.tsv"), "--subset", "train",
        ])
        assert "scored 6 videos" in out

    def test_eval_accuracy_and_map(self, ws):
        out = _run_ok([
            "eval", "--scores", str(ws["scores"]), "--manifest", str(ws["manifest"]),
        ])
        assert out.strip() == "1.0000"
        out = _run_ok([
            "eval", "--scores", str(ws["scores"]), "--manifest", str(ws["manifest"]),
            "--metric", "map",
        ])
        assert out.strip() == "1.0000"

    def test_eval_rejects_unknown_metric(self, ws):
        with pytest.raises(SystemExit) as exc:
            _run([
                "eval", "--scores", str(ws["scores"]),
                "--manifest", str(ws["manifest"]), "--metric", "f1",
            ])
        assert exc.value.code == 1

    def test_fuse_identity(self, ws, tmp_path):
        fused_path = tmp_path / "fused.tsv"
        out = _run_ok([
            "fuse", "--inputs", str(ws["scores"]), str(ws["scores"]),
            "--out", str(fused_path),
        ])
        assert "fused 2 score files" in out
        original = learn.read_scores(str(ws["scores"]))
        fused = learn.read_scores(str(fused_path))
        assert fused.video_ids == original.video_ids
        assert np.allclose(fused.scores, original.scores, atol=1e-9)

    def test_fuse_rejects_bad_weights(self, ws, tmp_path):
        rc, _, err = _run([
            "fuse", "--inputs", str(ws["scores"]), "--weights", "1,x",
            "--out", str(tmp_path / "f.tsv"),
        ])
        assert rc == 1
        assert "bad weights" in err

    def test_jobs_do_not_change_store_bytes(self, ws, tmp_path):
        out_path = tmp_path / "store_j2.pcnf"
        _run_ok([
            "extract-series", "--manifest", str(ws["manifest"]),
            "--out", str(out_path),
            "--provider", "test_embedder", "--dim", "16", "--patch-side", "32",
            "--jobs", "2",
        ])
        assert out_path.read_bytes() == ws["store"].read_bytes()


class TestReport:
    def test_writes_table_and_figures(self, ws, tmp_path):
        report_path = tmp_path / "report.tsv"
        fig_dir = tmp_path / "figs"
        out = _run_ok([
            "report", "--scores-a", str(ws["scores"]), "--scores-b", str(ws["scores"]),
            "--manifest", str(ws["manifest"]),
            "--out", str(report_path), "--figures", str(fig_dir),
        ])
        assert f"wrote {report_path} and 2 figures to {fig_dir}" in out
        assert report_path.read_text().strip()
        assert sorted(os.listdir(fig_dir)) == [
            "report_class_accuracy.png", "report_rank_moves.png",
        ]

    def test_figures_default_next_to_report(self, ws, tmp_path):
        report_path = tmp_path / "rpt.tsv"
        _run_ok([
            "report", "--scores-a", str(ws["scores"]), "--scores-b", str(ws["scores"]),
            "--manifest", str(ws["manifest"]), "--out", str(report_path),
        ])
        assert (tmp_path / "rpt_rank_moves.png").exists()
        assert (tmp_path / "rpt_class_accuracy.png").exists()


class TestHlpf:
    def test_fit_encode_train_eval(self, ws, tmp_path):
        codebook_path = tmp_path / "cb.txt"
        out = _run_ok([
            "hlpf-fit", "--manifest", str(ws["manifest"]),
            "--out", str(codebook_path), "--codebook-size", "8",
        ])
        assert "wrote 472-dimension codebook" in out

        hists = tmp_path / "hists"
        out = _run_ok([
            "hlpf-encode", "--manifest", str(ws["manifest"]),
            "--codebook", str(codebook_path), "--out", str(hists),
        ])
        assert "wrote 10 histograms" in out
        desc = agg_mod.read_descriptor(str(hists / "wave001.pcnv"))
        assert desc.dim == 472 * 8

        model_path = tmp_path / "chi2.psvm"
        out = _run_ok([
            "train", "--manifest", str(ws["manifest"]), "--features", str(hists),
            "--out", str(model_path), "--kind", "chi2_kernel",
        ])
        assert "trained chi2_kernel model on 6 videos" in out
        scores_path = tmp_path / "chi2_scores.tsv"
        _run_ok([
            "score", "--manifest", str(ws["manifest"]), "--features", str(hists),
            "--model", str(model_path), "--out", str(scores_path),
        ])
        out = _run_ok([
            "eval", "--scores", str(scores_path), "--manifest", str(ws["manifest"]),
        ])
        assert out.strip() == "1.0000"


@pytest.fixture(scope="module")
def fv_model(ws, tmp_path_factory):
    prefix = tmp_path_factory.mktemp("fv") / "fvmodel"
    out = _run_ok([
        "fv-fit", "--manifest", str(ws["manifest"]),
        "--out", str(prefix), "--components", "2",
    ])
    assert "K=2, d=6" in out
    assert os.path.exists(f"{prefix}.ppca") and os.path.exists(f"{prefix}.pgmm")
    return prefix


class TestFisherVectors:
    def test_encode_default_pyramid(self, ws, fv_model, tmp_path):
        out_dir = tmp_path / "fv"
        out = _run_ok([
            "fv-encode", "--manifest", str(ws["manifest"]),
            "--pca", f"{fv_model}.ppca", "--gmm", f"{fv_model}.pgmm",
            "--out", str(out_dir),
        ])
        assert "wrote 10 Fisher vectors" in out
        desc = agg_mod.read_descriptor(str(out_dir / "walk000.pcnv"))
        # (1x1, 1x3) grid: 4 cells of 2*K*d = 24 dims each
        assert desc.dim == 96

        flat_dir = tmp_path / "fv11"
        _run_ok([
            "fv-encode", "--manifest", str(ws["manifest"]),
            "--pca", f"{fv_model}.ppca", "--gmm", f"{fv_model}.pgmm",
            "--out", str(flat_dir), "--pyramid", "1x1",
        ])
        flat = agg_mod.read_descriptor(str(flat_dir / "walk000.pcnv"))
        assert flat.dim == 24
        assert_array_equal(flat.values, desc.values[:24])

    def test_rejects_bad_pyramid(self, ws, fv_model, tmp_path):
        rc, _, err = _run([
            "fv-encode", "--manifest", str(ws["manifest"]),
            "--pca", f"{fv_model}.ppca", "--gmm", f"{fv_model}.pgmm",
            "--out", str(tmp_path / "x"), "--pyramid", "ax1",
        ])
        assert rc == 1
        assert "COLSxROWS" in err


class TestLinkPoses:
    def test_recovers_true_track(self, ws, tmp_path):
        out_path = tmp_path / "linked.txt"
        out = _run_ok([
            "link-poses", "--candidates", str(ws["data"] / "candidates" / "walk000.txt"),
            "--flow", str(ws["data"] / "flow" / "walk000"),
            "--out", str(out_path),
        ])
        assert out.startswith("objective ")
        assert f"wrote {out_path}" in out
        linked = partcrop.read_pose_file(str(out_path))
        truth = partcrop.read_pose_file(str(ws["data"] / "poses" / "walk000.txt"))
        assert len(linked) == len(truth)
        for got, want in zip(linked.frames, truth.frames):
            assert np.allclose(got.coords, want.coords, atol=1e-12)

    def test_score_floor_can_empty_a_frame(self, ws, tmp_path):
        rc, _, err = _run([
            "link-poses", "--candidates", str(ws["data"] / "candidates" / "walk000.txt"),
            "--flow", str(ws["data"] / "flow" / "walk000"),
            "--out", str(tmp_path / "x.txt"), "--score-floor", "3.5",
        ])
        assert rc == 1
        assert err.startswith("error:")


def _tree_digest(root):
    digest = hashlib.sha256()
    for base, dirs, files in sorted(os.walk(root)):
        dirs.sort()
        for name in sorted(files):
            path = os.path.join(base, name)
            digest.update(os.path.relpath(path, root).encode())
            digest.update(open(path, "rb").read())
    return digest.hexdigest()


class TestSeedPrecedence:
    def _make(self, out_dir, argv_extra):
        _run_ok([
            "make-synthetic", "--out", str(out_dir),
            "--train-per-class", "1", "--test-per-class", "1", "--frames", "3",
        ] + argv_extra)
        return _tree_digest(out_dir)

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.delenv("PCNN_SEED", raising=False)
        want = self._make(tmp_path / "a", ["--seed", "3"])
        monkeypatch.setenv("PCNN_SEED", "9")
        assert self._make(tmp_path / "b", ["--seed", "3"]) == want

    def test_env_sets_seed(self, tmp_path, monkeypatch):
        monkeypatch.delenv("PCNN_SEED", raising=False)
        want = self._make(tmp_path / "a", ["--seed", "3"])
        monkeypatch.setenv("PCNN_SEED", "3")
        assert self._make(tmp_path / "b", []) == want
        monkeypatch.setenv("PCNN_SEED", "4")
        assert self._make(tmp_path / "c", []) != want

    def test_config_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.delenv("PCNN_SEED", raising=False)
        want = self._make(tmp_path / "a", ["--seed", "3"])
        cfg_path = tmp_path / "seed.cfg"
        config.write_config(str(cfg_path), config.Config({"seed": "3"}))
        monkeypatch.setenv("PCNN_SEED", "9")
        assert self._make(tmp_path / "b", ["--config", str(cfg_path)]) == want


class TestSelfcheck:
    def test_all_checks_pass(self):
        out = _run_ok(["selfcheck", "--seed", "0"])
        assert out.count("ok: ") == 6
        assert "FAIL" not in out
        assert out.strip().endswith("all checks passed")
