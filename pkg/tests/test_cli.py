import json

import pytest

from eyeaffect import cli, selection
from eyeaffect.features import read_feature_csv
from eyeaffect.metrics import read_eval_csv

FAST = [
    "--set", "model.max_epochs=2",
    "--set", "model.patience_epochs=2",
    "--set", "model.hidden_sizes=6,5",
]


def run(*args, expect=0):
    rc = cli.main(list(args))
    assert rc == expect, f"eyeaffect {' '.join(args)} -> {rc}, expected {expect}"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One tiny corpus run through every stage."""
    base = tmp_path_factory.mktemp("pipeline")
    corpus_dir = base / "corpus"
    out = base / "out"
    run("synth", "--corpus", str(corpus_dir), "--seed", "31", "--subjects", "3",
        "--minutes", "0.4", "--lag", "0.2", "--train", "2", "--val", "1")
    run("ingest", "--corpus", str(corpus_dir))
    run("features", "--corpus", str(corpus_dir), "--out", str(out))
    run("select", "--corpus", str(corpus_dir), "--out", str(out), "--protocol", "during",
        "--shifts", "0.0:0.4:0.2", "--svg", *FAST)
    run("train", "--corpus", str(corpus_dir), "--out", str(out),
        "--selection", str(out / "select" / "best_during_arousal.json"), *FAST)
    run("eval", "--corpus", str(corpus_dir), "--out", str(out),
        "--selection", str(out / "select" / "best_during_arousal.json"),
        "--split", "validation")
    run("baseline-humans", "--corpus", str(corpus_dir), "--out", str(out))
    run("report", "--out", str(out))
    return corpus_dir, out


class TestPipelineArtifacts:
    def test_feature_files(self, pipeline):
        _, out = pipeline
        files = sorted((out / "features").glob("*.csv"))
        assert [f.name for f in files] == ["S00.csv", "S01.csv", "S02.csv"]
        with open(files[0]) as fh:
            matrix = read_feature_csv(fh)
        assert matrix.values.shape[1] == 292

    def test_sweep_csv_round_trips(self, pipeline):
        _, out = pipeline
        path = out / "select" / "sweep_during_arousal.csv"
        with open(path) as fh:
            reports = selection.read_sweep_csv(fh)
        assert len(reports) == 3
        assert all(r.protocol == "during" for r in reports)

    def test_best_cell_json(self, pipeline):
        _, out = pipeline
        payload = json.loads((out / "select" / "best_during_arousal.json").read_text())
        assert payload["dimension"] == "arousal"
        assert payload["n_features"] >= 1

    def test_svg_emitted(self, pipeline):
        _, out = pipeline
        svg = (out / "select" / "sweep_during_arousal.svg").read_text()
        assert svg.startswith("<svg")
        assert "polyline" in svg

    def test_checkpoint_and_history(self, pipeline):
        _, out = pipeline
        assert (out / "models" / "arousal.ckpt").exists()
        history = (out / "models" / "history_arousal.csv").read_text().splitlines()
        assert history[0] == "epoch,train_sse,val_sse"
        assert len(history) == 3

    def test_eval_csv(self, pipeline):
        _, out = pipeline
        path = out / "eval" / "eval_eye_arousal_validation.csv"
        with open(path) as fh:
            rows = read_eval_csv(fh)
        assert rows[0][0] == "eye"
        assert rows[0][2] == "validation"

    def test_baseline_csv(self, pipeline):
        _, out = pipeline
        text = (out / "eval" / "baseline_humans_arousal_train.csv").read_text()
        assert "group-of-humans" in text

    def test_report_outputs(self, pipeline):
        _, out = pipeline
        assert (out / "report" / "sweep_all.csv").exists()
        assert (out / "report" / "ccc_vs_shift.svg").exists()

    def test_manifests_reference_outputs(self, pipeline):
        _, out = pipeline
        payload = json.loads((out / "manifests" / "features.json").read_text())
        assert payload["command"] == "features"
        assert all("sha" not in k for k in payload)  # structure sanity
        assert len(payload["outputs"]) == 3
        assert all(len(d) == 64 for d in payload["inputs"].values())


class TestRerunsAndErrors:
    def test_select_idempotent(self, pipeline):
        corpus_dir, out = pipeline
        sweep = out / "select" / "sweep_during_arousal.csv"
        before = sweep.read_bytes()
        run("select", "--corpus", str(corpus_dir), "--out", str(out), "--protocol",
            "during", "--shifts", "0.0:0.4:0.2", "--svg", *FAST)
        assert sweep.read_bytes() == before

    def test_eval_without_model_is_stage_error(self, pipeline, tmp_path):
        corpus_dir, out = pipeline
        run("eval", "--corpus", str(corpus_dir), "--out", str(tmp_path / "fresh"),
            "--features", str(out / "features"), expect=3)

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as err:
            cli.main(["select", "--bogus-flag"])
        assert err.value.code == 2

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_numeric_failure_exit_4(self, pipeline, tmp_path):
        corpus_dir, out = pipeline
        run("train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "diverged"),
            "--features", str(out / "features"),
            "--set", "model.learning_rate=1e12",
            "--set", "model.max_epochs=50",
            "--set", "model.patience_epochs=50",
            "--set", "model.hidden_sizes=5",
            expect=4)

    def test_unknown_config_key_is_data_error(self, pipeline):
        corpus_dir, out = pipeline
        run("ingest", "--corpus", str(corpus_dir), "--set", "model.bogus=1", expect=3)

    def test_missing_corpus_dir(self, tmp_path):
        run("ingest", "--corpus", str(tmp_path / "nope"), expect=3)

    def test_show_config_defaults(self, capsys):
        run("--show-config")
        out = capsys.readouterr().out
        assert "closure_threshold = 1.0" in out
        assert "direct_gaze_angle = 0.087" in out
        assert "seed = 1787452436" in out

    def test_fuse_csv(self, pipeline, tmp_path):
        _, out = pipeline
        fused_path = tmp_path / "fused.csv"
        run("fuse", "--eye", str(out / "features" / "S00.csv"),
            "--external", str(out / "features" / "S01.csv"), "--out", str(fused_path))
        with open(fused_path) as fh:
            fused = read_feature_csv(fh)
        assert fused.values.shape[1] == 584
        assert fused.catalog.names[292] == "ext.gaze.direct.ratio"

    def test_config_file_and_flag_override(self, pipeline, tmp_path, capsys):
        config = tmp_path / "custom.ini"
        config.write_text("[lld]\nclosure_threshold = 2.5\n")
        run("--config", str(config), "--show-config")
        out = capsys.readouterr().out
        assert "closure_threshold = 2.5" in out
        run("--config", str(config), "--set", "lld.closure_threshold=3.0", "--show-config")
        out = capsys.readouterr().out
        assert "closure_threshold = 3.0" in out

    def test_wavelet_dump_flag(self, pipeline, tmp_path):
        corpus_dir, _ = pipeline
        out = tmp_path / "dumped"
        run("features", "--corpus", str(corpus_dir), "--out", str(out),
            "--dump-wavelet", "250")
        from eyeaffect.wavelet import read_coefficient_csv

        with open(out / "features" / "wavelet_S00_250.csv") as fh:
            decomp = read_coefficient_csv(fh)
        assert decomp.levels == 7
        assert [a.size for a in decomp.approx] == [100, 50, 25, 13, 7, 4, 2]
        run("features", "--corpus", str(corpus_dir), "--out", str(out),
            "--dump-wavelet", "5", expect=3)

    def test_report_wilcoxon_between_shift_sweeps(self, pipeline):
        corpus_dir, out = pipeline
        run("select", "--corpus", str(corpus_dir), "--out", str(out), "--protocol", "none",
            "--shifts", "0.0:0.4:0.2", *FAST)
        run("report", "--out", str(out))
        text = (out / "report" / "wilcoxon.csv").read_text().splitlines()
        assert text[0] == "series_a,series_b,n_a,n_b,W,p"
        assert len(text) == 2
        fields = text[1].split(",")
        assert fields[0] == "sweep_during_arousal"
        assert fields[1] == "sweep_none_arousal"
        assert 0.0 < float(fields[5]) <= 1.0

    def test_cache_env_var_redirects(self, pipeline, tmp_path, monkeypatch):
        corpus_dir, _ = pipeline
        cache = tmp_path / "cachedir"
        monkeypatch.setenv("EYEAFFECT_CACHE", str(cache))
        out = tmp_path / "cached_out"
        run("features", "--corpus", str(corpus_dir), "--out", str(out))
        assert list(cache.glob("frames-*.npz"))
        assert not (out / "cache").exists()
