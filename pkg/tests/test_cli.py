import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from bdwalk.cli import main


def base_config(**over):
    cfg = {
        "version": 1,
        "model": {
            "d": 1,
            "params": {"p_table": [0.3], "p_tail": 0.3},
            "phi": {"table": [1.0], "tail": 1.0},
            "pi": [{"dx": [1], "p": 0.5}, {"dx": [-1], "p": 0.5}],
            "init": "zero",
        },
        "run": {"stop": {"n_jumps": 50}, "replicas": 200, "seed": 7,
                "workers": 1},
        "analysis": {},
    }
    for k, v in over.items():
        blk, key = k.split(".", 1) if "." in k else (None, k)
        if blk:
            cfg[blk][key] = v
        else:
            cfg[k] = v
    return cfg


def write_cfg(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def read_summary(out):
    return json.loads((out / "summary.json").read_text())


class TestCheck:
    def test_conditions_and_exit(self, tmp_path):
        p = write_cfg(tmp_path, base_config())
        out = tmp_path / "out"
        assert main(["check", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert s["conditions"]["ergodic"] and s["conditions"]["strongly_ergodic"]
        assert math.isclose(s["conditions"]["strongly_ergodic_sum"], 147 / 64,
                            rel_tol=1e-12)

    def test_modified_dominance_report(self, tmp_path):
        cfg = base_config()
        cfg["model"]["phi"] = {"table": [1.0, 0.5, 0.25], "tail": 0.25}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["check", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert any(r["test"] == "modified_stationary_dominated"
                   and r["verdict"] == "pass" for r in s["reports"])


class TestConfigErrors:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = base_config()
        cfg["extra"] = 1
        p = write_cfg(tmp_path, cfg)
        assert main(["check", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2

    def test_unknown_model_key_rejected(self, tmp_path):
        cfg = base_config()
        cfg["model"]["mystery"] = 1
        p = write_cfg(tmp_path, cfg)
        assert main(["check", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2

    def test_bad_version(self, tmp_path):
        cfg = base_config(version=2)
        p = write_cfg(tmp_path, cfg)
        assert main(["check", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["check", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2


class TestEstimateMu:
    def test_identity_rate_unit_mean(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 100}
        cfg["run"]["replicas"] = 2000
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["estimate-mu", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert 0.97 <= s["results"]["mu_hat"] <= 1.03
        assert len(s["results"]["ci"]) == 2

    def test_conditions_unmet_exit_3(self, tmp_path):
        cfg = base_config()
        cfg["model"]["phi"] = {"table": [1.0, 0.5, 0.7], "tail": 0.5}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["estimate-mu", "--config", str(p), "--out", str(out)]) == 3
        s = read_summary(out)
        assert s["verdict"] == "conditions-unmet"

    def test_exploratory_overrides(self, tmp_path):
        cfg = base_config()
        cfg["model"]["phi"] = {"table": [1.0, 0.5, 0.7], "tail": 0.5}
        cfg["run"]["replicas"] = 100
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["estimate-mu", "--config", str(p), "--out", str(out),
                     "--exploratory"]) == 0
        assert read_summary(out)["exploratory"]


class TestSimulate:
    def test_path_csv_and_clock_ks(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 400}
        cfg["analysis"] = {"clock_ks": True, "alpha": 0.01}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(p), "--out", str(out)]) == 0
        lines = (out / "data" / "path.csv").read_text().strip().split("\n")
        assert lines[0] == "n,tau,x1"
        assert len(lines) == 402
        s = read_summary(out)
        assert s["reports"][0]["test"] == "ks_exponential"


class TestDeterminism:
    def test_byte_identical_artifacts(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 60}
        cfg["run"]["replicas"] = 150
        cfg["model"]["phi"] = {"table": [1.0, 0.5], "tail": 0.5}
        p = write_cfg(tmp_path, cfg)
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["estimate-mu", "--config", str(p),
                         "--out", str(out)]) == 0
            blobs.append((out / "summary.json").read_bytes())
        assert blobs[0] == blobs[1]

    def test_csv_byte_identical(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 100}
        p = write_cfg(tmp_path, cfg)
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", str(p),
                         "--out", str(out)]) == 0
            blobs.append((out / "data" / "path.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_workers_do_not_change_verdict_or_values(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 60}
        cfg["run"]["replicas"] = 120
        p = write_cfg(tmp_path, cfg)
        outs = []
        for name, workers in (("w1", "1"), ("w2", "2")):
            out = tmp_path / name
            assert main(["estimate-mu", "--config", str(p), "--out", str(out),
                         "--workers", workers]) == 0
            outs.append(read_summary(out))
        assert outs[0]["results"]["mu_hat"] == outs[1]["results"]["mu_hat"]
        assert outs[0]["verdict"] == outs[1]["verdict"]


class TestDominanceAudit:
    def test_small_audit_passes_clean(self, tmp_path):
        cfg = base_config()
        cfg["model"]["phi"] = {"table": [1.0, 0.5, 0.25], "tail": 0.25}
        cfg["run"]["stop"] = {"n_jumps": 30}
        cfg["run"]["replicas"] = 60
        cfg["analysis"] = {"table_n": 10, "alpha": 0.01}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["dominance-audit", "--config", str(p),
                     "--out", str(out)]) == 0
        s = read_summary(out)
        names = {r["test"]: r["verdict"] for r in s["reports"]}
        assert names["zero_jump_time_order_violations"] == "pass"
        assert names["zero_superadditivity_violations"] == "pass"
        # violations CSV expected empty beyond its header
        lines = (out / "data" / "violations.csv").read_text().strip().split("\n")
        assert len(lines) == 1


class TestEnvWindow:
    def test_runs_and_reports_tv(self, tmp_path):
        cfg = base_config()
        cfg["model"]["pi"] = [{"dx": [1], "p": 0.7}, {"dx": [-1], "p": 0.3}]
        cfg["model"]["phi"] = {"table": [1.0, 0.6], "tail": 0.5}
        cfg["run"]["replicas"] = 400
        cfg["analysis"] = {"jumps": [20, 40], "window_radius": 1}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["env-window", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert 0.0 <= s["results"]["tv_between_first_last"] <= 1.0
        assert (out / "data" / "window_n20.csv").exists()

    def test_refuses_without_hypotheses(self, tmp_path):
        cfg = base_config()
        cfg["model"]["phi"] = {"table": [1.0, 0.5], "tail": 0.0}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["env-window", "--config", str(p), "--out", str(out)]) == 3
        assert main(["env-window", "--config", str(p), "--out", str(out),
                     "--exploratory"]) == 0
        assert read_summary(out)["exploratory"]


class TestTailsAndLadder:
    def test_tails_artifacts(self, tmp_path):
        cfg = base_config()
        cfg["analysis"] = {
            "first_passage": {"m_grid": [16, 64], "replicas": 4000},
            "interval_max": {"L": [4, 8], "rate": 1.0, "replicas": 1500},
        }
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["tails", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert s["results"]["interval_max"]["strictly_decreasing"]
        assert (out / "data" / "first_passage.csv").exists()
        assert (out / "data" / "interval_max.csv").exists()

    def test_ladder_artifacts(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"n_jumps": 150}
        cfg["run"]["replicas"] = 50
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["ladder", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert s["results"]["complete_steps"] > 0
        assert (out / "data" / "ladder_tails.csv").exists()


class TestCltCommand:
    def test_small_clt_run(self, tmp_path):
        cfg = base_config()
        cfg["run"]["stop"] = {"t_end": 200.0}
        cfg["run"]["replicas"] = 1500
        cfg["analysis"] = {"alpha": 0.01, "mu": {"n": 50, "replicas": 400}}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["clt", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert s["reports"][0]["test"] == "normality"
        assert (out / "data" / "scaled_endpoints.csv").exists()

    def test_clt_refuses_drift(self, tmp_path):
        cfg = base_config()
        cfg["model"]["pi"] = [{"dx": [1], "p": 0.7}, {"dx": [-1], "p": 0.3}]
        cfg["run"]["stop"] = {"t_end": 50.0}
        p = write_cfg(tmp_path, cfg)
        assert main(["clt", "--config", str(p),
                     "--out", str(tmp_path / "o")]) == 3


class TestLlnCommand:
    def test_directed_walk(self, tmp_path):
        cfg = base_config()
        cfg["model"]["pi"] = [{"dx": [1], "p": 1.0}]
        cfg["run"]["stop"] = {"t_end": 500.0}
        cfg["run"]["replicas"] = 400
        cfg["analysis"] = {"mu": {"n": 80, "replicas": 400}}
        p = write_cfg(tmp_path, cfg)
        out = tmp_path / "out"
        assert main(["lln", "--config", str(p), "--out", str(out)]) == 0
        s = read_summary(out)
        assert abs(s["results"]["velocity"][0] - 1.0) < 0.05


class TestConsoleEntry:
    def test_module_invocation(self, tmp_path):
        cfg = base_config()
        p = write_cfg(tmp_path, cfg)
        r = subprocess.run(
            [sys.executable, "-m", "bdwalk.cli", "check",
             "--config", str(p), "--out", str(tmp_path / "o")],
            capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
