import json

import pytest

from midnightq.cli import build_config, main

SMALL_ARGS = ["--n", "18", "--lambda", "3.03", "--mean-los", "5.3"]


class TestConfigParsing:
    def test_flags_populate_config(self):
        cfg = build_config(["exact", *SMALL_ARGS, "--truncation", "120", "--tol", "1e-10"])
        assert cfg.command == "exact"
        assert cfg.n == 18
        assert cfg.truncation == 120
        assert cfg.tol == 1e-10

    def test_config_file_supplies_defaults(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"n": 18, "lambda": 3.03, "mean_los": 5.3, "seed": 9}))
        cfg = build_config(["simulate", "--config", str(cfg_file)])
        assert cfg.n == 18
        assert cfg.seed == 9

    def test_flags_win_over_config_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"n": 18, "lambda": 3.03, "mean_los": 5.3, "seed": 9}))
        cfg = build_config(["simulate", "--config", str(cfg_file), "--seed", "4"])
        assert cfg.seed == 4

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ValueError, match="unknown config keys"):
            build_config(["exact", "--config", str(cfg_file)])

    def test_unknown_flag_rejected(self, capsys):
        with pytest.raises(SystemExit) as err:
            build_config(["exact", "--bogus", "1"])
        assert err.value.code == 2
        capsys.readouterr()

    def test_sizes_list_for_limit_check(self):
        cfg = build_config(["limit-check", "--n", "25,100,400", "--mu", "0.2"])
        assert cfg.sizes == (25, 100, 400)

    def test_mu_and_mean_los_conflict(self):
        with pytest.raises(ValueError, match="not both"):
            build_config(["exact", "--n", "18", "--lambda", "3.03", "--mu", "0.2", "--mean-los", "5.3"])


class TestCommands:
    def test_exact_writes_deterministic_csv(self, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        args = ["exact", *SMALL_ARGS, "--truncation", "150"]
        assert main([*args, "--out", str(out1)]) == 0
        assert main([*args, "--out", str(out2)]) == 0
        data = out1.read_bytes()
        assert data == out2.read_bytes()
        assert data.startswith(b"state,probability\n")
        assert len(data.splitlines()) == 152

    def test_missing_params_exit_2(self, capsys):
        assert main(["exact", "--n", "18"]) == 2
        assert "invalid configuration" in capsys.readouterr().err

    def test_formula_emits_density(self, tmp_path):
        out = tmp_path / "formula.csv"
        assert main(["formula", *SMALL_ARGS, "--out", str(out)]) == 0
        assert out.read_text().startswith("x,density\n")

    def test_formula_critical_load_exit_3(self, capsys):
        mu = 0.25
        args = ["formula", "--n", "40", "--lambda", str(40 * mu), "--mu", str(mu)]
        assert main(args) == 3
        assert "γ ≤ 0" in capsys.readouterr().err

    def test_projection_json_includes_diagnostics(self, tmp_path):
        out = tmp_path / "proj.json"
        args = ["projection", *SMALL_ARGS, "--elements", "48", "--format", "json", "--out", str(out)]
        assert main(args) == 0
        payload = json.loads(out.read_text())
        assert set(payload) == {"x", "density", "diagnostics"}
        assert set(payload["diagnostics"]) == {
            "norm_sq",
            "residual",
            "condition_estimate",
            "clipped_mass",
        }

    def test_simulate_seeded_runs_are_identical(self, tmp_path):
        out1 = tmp_path / "s1.csv"
        out2 = tmp_path / "s2.csv"
        args = ["simulate", *SMALL_ARGS, "--steps", "50000", "--seed", "5"]
        assert main([*args, "--out", str(out1)]) == 0
        assert main([*args, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_limit_check_reports_and_warns(self, tmp_path, capsys):
        out = tmp_path / "limit.json"
        args = [
            "limit-check", "--n", "25,100", "--mean-los", "5.3",
            "--steps", "5", "--replications", "400", "--seed", "1",
            "--out", str(out),
        ]
        assert main(args) == 0
        assert "warning" in capsys.readouterr().err
        payload = json.loads(out.read_text())
        assert [e["n"] for e in payload["entries"]] == [25, 100]

    def test_limit_check_rejects_csv(self, capsys):
        args = ["limit-check", "--n", "25,100", "--mu", "0.2", "--format", "csv"]
        assert main(args) == 2
        capsys.readouterr()

    def test_compare_report_schema(self, tmp_path):
        out = tmp_path / "cmp.json"
        args = ["compare", *SMALL_ARGS, "--elements", "96", "--out", str(out)]
        assert main(args) == 0
        payload = json.loads(out.read_text())
        assert set(payload) == {"params", "methods", "tv"}
        assert [m["name"] for m in payload["methods"]] == ["exact", "formula", "projection"]
        for method in payload["methods"]:
            assert set(method) == {"name", "mean", "sd", "p_wait"}
        assert set(payload["tv"]) == {
            "formula_vs_exact",
            "projection_vs_exact",
            "projection_vs_formula",
        }
        assert all(0.0 <= v < 0.1 for v in payload["tv"].values())

    def test_compare_deterministic_bytes(self, tmp_path):
        out1 = tmp_path / "c1.json"
        out2 = tmp_path / "c2.json"
        args = ["compare", *SMALL_ARGS, "--elements", "64", "--truncation", "200"]
        assert main([*args, "--out", str(out1)]) == 0
        assert main([*args, "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
