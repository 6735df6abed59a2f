"""End-to-end command-line runs against the bundled toy table and micro studies."""

import csv
import json

import numpy as np
import pytest

import survim.cli as cli
from survim.cli import main, toy_dataset_path
from survim.errors import NonConvergenceError


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def toy_doc(out, **kw):
    doc = {
        "dataset": "toy",
        "measure": {"kind": "brier", "tau": 0.4},
        "s": ["x1"],
        "n_folds": 2,
        "seed": 3,
        "event_model": {"family": "marginal-km"},
        "censor_model": {"family": "marginal-km"},
        "out": str(out),
    }
    doc.update(kw)
    return doc


def micro_study_doc(out, **kw):
    doc = {
        "scenario": {"name": "III"},
        "n": 120,
        "reps": 2,
        "measure": {"kind": "brier", "tau": 0.5},
        "s": [1],
        "n_folds": 2,
        "seed": 5,
        "event_model": {"family": "marginal-km"},
        "censor_model": {"family": "marginal-km"},
        "out": str(out),
    }
    doc.update(kw)
    return doc


class TestToyDataset:
    def test_bundled_file_is_readable(self):
        path = toy_dataset_path()
        assert path.exists()
        with open(path) as fh:
            header = fh.readline().strip()
        assert header == "time,status,x1,x2,x3,x4,x5"


class TestEstimate:
    def test_toy_run_writes_result_and_table(self, tmp_path, capsys):
        out = tmp_path / "run"
        cfg = write_config(tmp_path, toy_doc(out))
        assert main(["estimate", "--config", cfg]) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["provenance"]["tool"] == "survim"
        assert result["provenance"]["command"] == "estimate"
        assert result["s"] == [1] and result["n"] == 60
        est = result["estimate"]
        assert set(est) == {"psi", "se", "ci_lower", "ci_upper",
                            "p_one_sided", "v_full", "v_reduced"}
        assert np.isfinite(est["psi"])
        with open(out / "estimate.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert tuple(rows[0].keys()) == cli.ESTIMATE_COLUMNS
        assert rows[0]["measure"] == "brier" and rows[0]["n"] == "60"
        shown = capsys.readouterr().out
        assert "psi=" in shown and "wrote" in shown

    def test_runs_are_deterministic(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg1 = write_config(tmp_path, toy_doc(out1), "c1.json")
        cfg2 = write_config(tmp_path, toy_doc(out2), "c2.json")
        assert main(["estimate", "--config", cfg1]) == 0
        assert main(["estimate", "--config", cfg2]) == 0
        r1 = json.loads((out1 / "result.json").read_text())
        r2 = json.loads((out2 / "result.json").read_text())
        assert r1["estimate"] == r2["estimate"]

    def test_scenario_source_draws_data(self, tmp_path):
        out = tmp_path / "scen"
        doc = toy_doc(out)
        del doc["dataset"]
        doc["scenario"] = {"name": "III", "n": 150, "data_seed": 4}
        doc["s"] = [1]
        cfg = write_config(tmp_path, doc)
        assert main(["estimate", "--config", cfg]) == 0
        assert json.loads((out / "result.json").read_text())["n"] == 150

    def test_seed_override_lands_in_provenance(self, tmp_path):
        out = tmp_path / "o"
        cfg = write_config(tmp_path, toy_doc(out))
        assert main(["estimate", "--config", cfg, "--seed", "9"]) == 0
        result = json.loads((out / "result.json").read_text())
        assert result["provenance"]["seed"] == 9

    def test_config_hash_tracks_document_changes(self, tmp_path):
        out = tmp_path / "h"
        cfg = write_config(tmp_path, toy_doc(out), "h1.json")
        main(["estimate", "--config", cfg])
        h1 = json.loads((out / "result.json").read_text())["provenance"]["config_sha256"]
        cfg2 = write_config(tmp_path, toy_doc(out, seed=4), "h2.json")
        main(["estimate", "--config", cfg2])
        h2 = json.loads((out / "result.json").read_text())["provenance"]["config_sha256"]
        assert h1 != h2 and len(h1) == 64


class TestEstimateErrors:
    def run_expecting(self, tmp_path, capsys, doc, code, fragment):
        cfg = write_config(tmp_path, doc)
        assert main(["estimate", "--config", cfg]) == code
        err = capsys.readouterr().err
        assert err.startswith("survim: error:")
        assert fragment in err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        self.run_expecting(tmp_path, capsys, toy_doc(tmp_path, bogus_key=1),
                           2, "unknown keys ['bogus_key']")

    def test_dataset_and_scenario_both_given(self, tmp_path, capsys):
        doc = toy_doc(tmp_path)
        doc["scenario"] = {"name": "III", "n": 50}
        self.run_expecting(tmp_path, capsys, doc, 2,
                           "exactly one of 'dataset' or 'scenario'")

    def test_unknown_feature_name_lists_columns(self, tmp_path, capsys):
        doc = toy_doc(tmp_path, s=["x_nope"])
        self.run_expecting(tmp_path, capsys, doc, 2,
                           "no feature named 'x_nope' (have x1, x2, x3, x4, x5)")

    def test_tau_beyond_observations(self, tmp_path, capsys):
        doc = toy_doc(tmp_path, measure={"kind": "brier", "tau": 99.0})
        self.run_expecting(tmp_path, capsys, doc, 2,
                           "exceeds the largest observed time")

    def test_boolean_masquerading_as_integer(self, tmp_path, capsys):
        doc = toy_doc(tmp_path, n_folds=True)
        self.run_expecting(tmp_path, capsys, doc, 2, "n_folds")

    def test_missing_config_file(self, capsys):
        assert main(["estimate", "--config", "/nonexistent/cfg.json"]) == 2
        assert "config file not found" in capsys.readouterr().err

    def test_config_flag_required(self, capsys):
        assert main(["estimate"]) == 2
        assert "--config PATH is required" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["estimate", "--config", str(path)]) == 2
        assert "invalid JSON" in capsys.readouterr().err

    def test_numerical_failures_exit_three(self, tmp_path, capsys, monkeypatch):
        def blow_up(*args, **kwargs):
            raise NonConvergenceError("fit stalled after 100 iterations")

        monkeypatch.setattr(cli, "estimate_vim", blow_up)
        cfg = write_config(tmp_path, toy_doc(tmp_path / "x"))
        assert main(["estimate", "--config", cfg]) == 3
        assert "fit stalled" in capsys.readouterr().err


class TestSimulate:
    def test_micro_study_runs_and_reports(self, tmp_path, capsys):
        out = tmp_path / "study"
        cfg = write_config(tmp_path, micro_study_doc(out))
        assert main(["simulate", "--config", cfg]) == 0
        shown = capsys.readouterr().out
        assert "[1/2] ok psi=" in shown and "[2/2] ok psi=" in shown
        assert "reps=2 failures=0" in shown
        with open(out / "replicates.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 and all(r["status"] == "ok" for r in rows)
        config_echo = json.loads((out / "config.json").read_text())
        assert config_echo["provenance"]["command"] == "simulate"
        assert config_echo["config"]["scenario"] == {"name": "III"}

    def test_repeat_runs_identical(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        cfg1 = write_config(tmp_path, micro_study_doc(out1), "s1.json")
        cfg2 = write_config(tmp_path, micro_study_doc(out2), "s2.json")
        main(["simulate", "--config", cfg1])
        main(["simulate", "--config", cfg2])
        assert ((out1 / "replicates.csv").read_text()
                == (out2 / "replicates.csv").read_text())

    def test_threads_flag_preserves_rows(self, tmp_path):
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        cfg1 = write_config(tmp_path, micro_study_doc(out1), "t1.json")
        cfg2 = write_config(tmp_path, micro_study_doc(out2), "t2.json")
        main(["simulate", "--config", cfg1])
        main(["simulate", "--config", cfg2, "--threads", "2"])
        assert ((out1 / "replicates.csv").read_text()
                == (out2 / "replicates.csv").read_text())

    def test_profile_and_config_conflict(self, tmp_path, capsys):
        cfg = write_config(tmp_path, micro_study_doc(tmp_path))
        assert main(["simulate", "--config", cfg, "--profile", "paper-fig1"]) == 2
        assert "either --config or --profile" in capsys.readouterr().err

    def test_feature_names_rejected_for_drawn_data(self, tmp_path, capsys):
        doc = micro_study_doc(tmp_path, s=["x1"])
        cfg = write_config(tmp_path, doc)
        assert main(["simulate", "--config", cfg]) == 2
        assert "1-based indices" in capsys.readouterr().err


class TestOracle:
    def test_prints_value_with_mc_error(self, tmp_path, capsys):
        doc = {
            "scenario": {"name": "III"},
            "measure": {"kind": "auc", "tau": 0.5},
            "s": [2],
            "mc_size": 40_000,
            "chunks": 4,
            "seed": 2,
            "out": str(tmp_path / "orc"),
        }
        cfg = write_config(tmp_path, doc)
        assert main(["oracle", "--config", cfg]) == 0
        shown = capsys.readouterr().out
        assert shown.startswith("scenario III auc tau=0.5 s=[2]: psi0 = ")
        payload = json.loads((tmp_path / "orc" / "oracle.json").read_text())
        assert payload["scenario"] == "III"
        # generous band: tiny MC size, but the target is 0.038
        assert 0.0 < payload["psi0"] < 0.1
        assert payload["mc_se"] > 0.0

    def test_chunk_validation(self, tmp_path, capsys):
        doc = {"scenario": {"name": "III"}, "measure": {"kind": "auc", "tau": 0.5},
               "s": [2], "mc_size": 100, "chunks": 1}
        cfg = write_config(tmp_path, doc)
        assert main(["oracle", "--config", cfg]) == 2
        assert "chunks" in capsys.readouterr().err


class TestReproduce:
    def test_emits_runnable_config(self, tmp_path, capsys):
        out = tmp_path / "fig1"
        assert main(["reproduce", "paper-fig1", "--out", str(out)]) == 0
        shown = capsys.readouterr().out
        assert f"run: survim simulate --config {out / 'config.json'}" in shown
        doc = json.loads((out / "config.json").read_text())
        assert doc["scenario"] == {"name": "I"}
        assert doc["n"] == 1000 and doc["reps"] == 200
        assert doc["measure"] == {"kind": "auc", "tau": 0.5}
        assert doc["s"] == [1]
        assert doc["event_model"]["basis"] == {"pairs": [[1, 2], [3, 4], [1, 5]]}

    def test_unknown_profile(self, capsys):
        assert main(["reproduce", "paper-fig9"]) == 2
        assert "unknown profile" in capsys.readouterr().err


class TestParser:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "survim" in capsys.readouterr().out

    def test_subcommand_required(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2
