import json
import math

import numpy as np
import pytest

from fairlab.cli import ConfigError, execute_run, load_config, main

BASE_CONFIG = {
    "universe": {"n": 3},
    "hypothesis_class": {"table": [[1, 0, 0], [1, 1, 0]]},
    "similarity": {"table": [[0, 0, 1], [0, 0, 0], [1, 0, 0]]},
    "learner": {"expweights": {}},
    "environment": {"stochastic": {"uniform_labels": {"label_probs": [0.9, 0.5, 0.1]}}},
    "run": {"T": 100, "k": 4, "alpha_prime": 0.3, "epsilon": 0.2},
    "seeds": [1],
}


def write_config(tmp_path, overrides=None, **run_overrides):
    cfg = json.loads(json.dumps(BASE_CONFIG))
    if overrides:
        cfg.update(overrides)
    cfg["run"].update(run_overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestRun:
    def test_writes_T_rows(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out]) == 0
        lines = (tmp_path / "art" / "run_seed1.csv").read_text().splitlines()
        assert lines[0] == "t,err,unfair,lagrangian,audit_rho1,audit_rho2,cum_err,cum_unfair"
        assert len(lines) == 101
        summary = json.loads((tmp_path / "art" / "summary_seed1.json").read_text())
        assert summary["C"] == 25
        assert summary["regret_report"]["bound_checks"]

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["run", cfg, "--out", str(tmp_path / "a")])
        main(["run", cfg, "--out", str(tmp_path / "b")])
        for name in ("run_seed1.csv", "summary_seed1.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_rejects_epsilon_at_tolerance(self, tmp_path, capsys):
        cfg = write_config(tmp_path, epsilon=0.3)
        assert main(["run", cfg, "--out", str(tmp_path / "art")]) == 2
        assert "epsilon" in capsys.readouterr().err
        assert not (tmp_path / "art" / "run_seed1.csv").exists()

    def test_seed_override_and_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FAIRLAB_THREADS", "2")
        cfg = write_config(tmp_path)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out, "--seed", "3", "--seed", "4"]) == 0
        assert (tmp_path / "art" / "run_seed3.csv").exists()
        assert (tmp_path / "art" / "run_seed4.csv").exists()

    def test_log_policies(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out, "--log-policies"]) == 0
        lines = (tmp_path / "art" / "policies_seed1.csv").read_text().splitlines()
        assert lines[0] == "t,w0,w1,w2"
        assert len(lines) == 101
        assert main(["verify", out]) == 0


class TestVerify:
    def test_round_trip(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "art")
        main(["run", cfg, "--out", out])
        assert main(["verify", out]) == 0

    def test_flipped_unfair_bit_detected(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "art"
        main(["run", cfg, "--out", str(out)])
        path = out / "run_seed1.csv"
        lines = path.read_text().splitlines()
        parts = lines[3].split(",")
        parts[2] = "1" if parts[2] == "0" else "0"
        lines[3] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        assert main(["verify", str(out)]) == 1

    def test_truncated_csv_structured_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "art"
        main(["run", cfg, "--out", str(out)])
        path = out / "run_seed1.csv"
        path.write_text("\n".join(path.read_text().splitlines()[:40]) + "\n")
        assert main(["verify", str(out)]) == 2
        assert "expected 100 data rows" in capsys.readouterr().err

    def test_missing_config_echo(self, tmp_path):
        assert main(["verify", str(tmp_path)]) == 2


class TestSweep:
    def test_bound_column_scales_as_sqrt_T(self, tmp_path, capsys):
        cfg = write_config(tmp_path, T=50)
        assert main(["sweep", cfg, "--T", "500", "--T", "2000", "--T", "8000"]) == 0
        rows = [ln.split(",") for ln in capsys.readouterr().out.strip().splitlines()]
        assert rows[0] == ["T", "cum_unfair", "misclass_regret", "bound"]
        bounds = [float(r[3]) for r in rows[1:]]
        assert bounds[0] < bounds[1] < bounds[2]
        assert bounds[2] / bounds[1] == pytest.approx(2.0, abs=1e-12)
        C, k, m = 25, 4, 3
        assert bounds[1] == pytest.approx(2 * (C + k) * math.sqrt(math.log(m) * 2000))

    def test_empty_T_list(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["sweep", cfg]) == 0
        assert capsys.readouterr().out.strip() == "T,cum_unfair,misclass_regret,bound"

    def test_out_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path, T=50)
        dest = tmp_path / "sweep.csv"
        assert main(["sweep", cfg, "--T", "100", "--out", str(dest)]) == 0
        assert dest.read_text().splitlines()[0].startswith("T,")


class TestConfigErrors:
    def test_missing_section(self, tmp_path):
        cfg = json.loads(json.dumps(BASE_CONFIG))
        del cfg["similarity"]
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ConfigError, match="similarity"):
            execute_run(load_config(str(path)), 0)

    def test_invalid_json_line_numbers(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{\n "universe": {,}\n}')
        with pytest.raises(ConfigError, match="line 2"):
            load_config(str(path))

    def test_unknown_learner(self, tmp_path):
        cfg = write_config(tmp_path, overrides={"learner": {"sgd": {}}})
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 2

    def test_threshold_size_mismatch(self, tmp_path):
        cfg = write_config(tmp_path, overrides={"hypothesis_class": {"threshold": 5}})
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 2

    def test_bad_label_probs(self, tmp_path):
        env = {"stochastic": {"uniform_labels": {"label_probs": [0.5, 0.5]}}}
        cfg = write_config(tmp_path, overrides={"environment": env})
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 2

    def test_scripted_too_short(self, tmp_path):
        env = {"scripted": {"batches": [{"xs": [0, 1], "ys": [0, 1]}]}}
        cfg = write_config(tmp_path, overrides={"environment": env})
        assert main(["run", cfg, "--out", str(tmp_path / "a")]) == 2

    def test_scripted_env_round_trip(self, tmp_path):
        batches = [{"xs": [0, 1, 2, 1], "ys": [1, 0, 0, 1]} for _ in range(10)]
        pairs = [None, [0, 1]] * 5
        env = {"scripted": {"batches": batches, "pairs": pairs}}
        cfg = write_config(tmp_path, overrides={"environment": env}, T=10)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out]) == 0
        summary = json.loads((tmp_path / "art" / "summary_seed1.json").read_text())
        assert summary["generalization"] is None  # distributional checks need iid data
        assert main(["verify", out]) == 0

    def test_constant_zero_string_spec(self, tmp_path):
        cfg = write_config(tmp_path, overrides={"learner": "constant_zero"}, T=10)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out]) == 0
        trace, _ = execute_run(load_config(cfg), 1)
        assert trace.unfairs().sum() == 0


class TestFtplConfig:
    def test_ftpl_run_records_omega_and_separator(self, tmp_path):
        cfg = write_config(tmp_path, overrides={"learner": {"ftpl": {}}}, T=50)
        out = str(tmp_path / "art")
        assert main(["run", cfg, "--out", out]) == 0
        summary = json.loads((tmp_path / "art" / "summary_seed1.json").read_text())
        assert summary["omega"] > 0
        assert summary["separator_size"] == 2
        assert main(["verify", out]) == 0

    def test_ftpl_mixture_flag(self, tmp_path):
        cfg = write_config(tmp_path,
                           overrides={"learner": {"ftpl": {"mixture": True, "mixture_draws": 4}}},
                           T=20)
        trace, _ = execute_run(load_config(cfg), 5)
        w = trace.records[0].policy.weights
        assert (np.round(w * 4) == w * 4).all()
