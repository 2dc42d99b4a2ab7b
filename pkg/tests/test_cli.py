"""CLI surface: config validation, build/decode/eval/sweep, exit codes."""

import pytest

from ragasr.cli import EXIT_CONFIG, EXIT_OK, load_run_config, main

BASE_CONFIG = """\
[run]
mode = m2r
seed = 11
output_dir = {out}

[corpus]
train_size = 60
test_size = 12

[knn]
k = 16
tau = 1.0
lambda = 0.3

[icl]
n_max = 10

[decode]
timing = deterministic

[eval]
modes = all
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(BASE_CONFIG.format(out=tmp_path / "out"), encoding="utf-8")
    return path


class TestConfig:
    def test_round_trip(self, run_config):
        config = load_run_config(run_config)
        assert config.mode == "m2r"
        assert config.seed == 11
        assert config.lam == 0.3
        assert config.timing == "deterministic"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[run]\nmode = m2r\nturbo = yes\n", encoding="utf-8")
        assert main(["eval", "--config", str(path)]) == EXIT_CONFIG

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experimental]\nx = 1\n", encoding="utf-8")
        assert main(["eval", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        assert main(["eval", "--config", str(tmp_path / "absent.ini")]) == EXIT_CONFIG

    def test_bad_lambda_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[knn]\nlambda = 1.5\n", encoding="utf-8")
        assert main(["eval", "--config", str(path)]) == EXIT_CONFIG

    def test_usage_error_exit_code(self):
        assert main(["frobnicate"]) == EXIT_CONFIG


class TestBuild:
    def test_build_token_from_synthetic(self, run_config, tmp_path, capsys):
        out = tmp_path / "token.m2rd"
        code = main([
            "build", "--kind", "token", "--config", str(run_config),
            "--out-path", str(out),
        ])
        assert code == EXIT_OK
        assert out.exists()
        assert "kind=token" in capsys.readouterr().out

    def test_build_sentence_runs_smoke_check(self, run_config, tmp_path, capsys):
        out = tmp_path / "sentence.m2rd"
        code = main([
            "build", "--kind", "sentence", "--config", str(run_config),
            "--out-path", str(out),
        ])
        assert code == EXIT_OK
        assert "self-retrieval check: ok" in capsys.readouterr().out

    def test_build_missing_exports_path(self, tmp_path):
        code = main([
            "build", "--kind", "token", "--exports", str(tmp_path / "none.uex"),
            "--out-path", str(tmp_path / "t.m2rd"),
        ])
        assert code == EXIT_CONFIG

    def test_build_from_exports(self, tmp_path):
        from ragasr.model import ToyAsrModel, ToyModelConfig, Utterance
        from ragasr.storage import export_records_from_model, write_exports

        model = ToyAsrModel(ToyModelConfig.identity(rng_seed=2))
        corpus = [
            Utterance(audio=model.audio_for_tokens((2, 3, 4), "e0"), transcript=(2, 3, 4))
        ]
        exports = tmp_path / "c.uex"
        write_exports(export_records_from_model(model, corpus), exports)
        out = tmp_path / "from_exports.m2rd"
        code = main([
            "build", "--kind", "token", "--exports", str(exports), "--out-path", str(out),
        ])
        assert code == EXIT_OK
        assert out.exists()


class TestEval:
    def test_four_modes_and_comparison_table(self, run_config, tmp_path, capsys):
        assert main(["eval", "--config", str(run_config)]) == EXIT_OK
        out = tmp_path / "out"
        lines = (out / "comparison.csv").read_text().strip().split("\n")
        assert lines[0] == "mode,cer,rr,substitutions,deletions,insertions,rtf"
        table = {row.split(",")[0]: row.split(",") for row in lines[1:]}
        assert set(table) == {"baseline", "knn_only", "icl_only", "m2r"}
        cers = {mode: float(row[1]) for mode, row in table.items()}
        assert cers["m2r"] <= min(cers["knn_only"], cers["icl_only"])
        assert table["baseline"][2] == ""
        for mode in ("baseline", "m2r"):
            assert (out / f"{mode}.csv").exists()
            assert (out / f"{mode}.summary.txt").exists()

    def test_repeat_runs_byte_identical_with_deterministic_timing(self, run_config, tmp_path):
        assert main(["eval", "--config", str(run_config), "--modes", "baseline"]) == EXIT_OK
        first = (tmp_path / "out" / "baseline.csv").read_bytes()
        assert main(["eval", "--config", str(run_config), "--modes", "baseline"]) == EXIT_OK
        assert (tmp_path / "out" / "baseline.csv").read_bytes() == first

    def test_degenerate_m2r_rr_is_exactly_zero(self, run_config, tmp_path):
        code = main([
            "eval", "--config", str(run_config), "--modes", "baseline,m2r",
            "--lambda", "0", "--n-max", "0",
        ])
        assert code == EXIT_OK
        lines = (tmp_path / "out" / "comparison.csv").read_text().strip().split("\n")
        table = {row.split(",")[0]: row.split(",") for row in lines[1:]}
        assert float(table["m2r"][2]) == 0.0
        assert table["m2r"][1] == table["baseline"][1]


class TestDecode:
    def test_writes_hypotheses(self, run_config, tmp_path):
        assert main(["decode", "--config", str(run_config), "--mode", "baseline"]) == EXIT_OK
        lines = (tmp_path / "out" / "hypotheses.csv").read_text().strip().split("\n")
        assert lines[0] == "id,n_prompts,wall_time_s,audio_s,hypothesis"
        assert len(lines) == 13


class TestSweep:
    def test_lambda_zero_row_equals_baseline(self, run_config, tmp_path):
        assert main(["eval", "--config", str(run_config), "--modes", "baseline"]) == EXIT_OK
        baseline_summary = dict(
            line.split("=", 1)
            for line in (tmp_path / "out" / "baseline.summary.txt").read_text().strip().split("\n")
        )
        # In knn_only mode the lambda=0 point degenerates to the baseline.
        code = main([
            "sweep", "--config", str(run_config), "--axis", "lambda",
            "--values", "0,0.3", "--mode", "knn_only",
        ])
        assert code == EXIT_OK
        rows = (tmp_path / "out" / "sweep.csv").read_text().strip().split("\n")
        assert rows[0] == "value,cer,rtf"
        lam0 = dict(zip(("value", "cer", "rtf"), rows[1].split(",")))
        assert float(lam0["cer"]) == float(baseline_summary["cer"])

    def test_n_max_sweep_lowers_cer_and_raises_rtf(self, run_config, tmp_path):
        code = main([
            "sweep", "--config", str(run_config), "--axis", "n_max", "--values", "0,10",
        ])
        assert code == EXIT_OK
        rows = (tmp_path / "out" / "sweep.csv").read_text().strip().split("\n")[1:]
        points = {row.split(",")[0]: row.split(",") for row in rows}
        assert float(points["10"][1]) < float(points["0"][1])
        assert float(points["10"][2]) > float(points["0"][2])

    def test_empty_values_rejected(self, run_config):
        assert main([
            "sweep", "--config", str(run_config), "--axis", "n_max", "--values", ",",
        ]) == EXIT_CONFIG

    def test_invalid_value_rejected_before_running(self, run_config, tmp_path):
        code = main([
            "sweep", "--config", str(run_config), "--axis", "lambda", "--values", "0.2,1.7",
        ])
        assert code == EXIT_CONFIG
        assert not (tmp_path / "out" / "sweep.csv").exists()

    def test_negative_n_max_rejected(self, run_config):
        assert main([
            "sweep", "--config", str(run_config), "--axis", "n_max", "--values", "-1",
        ]) == EXIT_CONFIG
