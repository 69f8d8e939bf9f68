"""Command-line surface: configs, reports, exit codes, determinism."""

import csv
import io
import json
import math

import pytest

from pathkl.cli import main

pytestmark = pytest.mark.usefixtures("capsys")


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _girsanov_cfg(**over):
    cfg = {
        "model_mu": {"id": "constant_drift", "params": {"theta": 1.0}},
        "model_P": {"id": "brownian", "params": {}},
        "initial_mu": {"kind": "point", "point": [0.0]},
        "initial_P": {"kind": "point", "point": [0.0]},
        "grid": {"horizon": 1.0, "steps": 50},
        "estimator": "girsanov",
        "n_paths": 200,
        "seed": 0,
    }
    cfg.update(over)
    return cfg


def _report(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# run


def test_run_girsanov_report(tmp_path):
    cfg_path = _write(tmp_path, "g.json", _girsanov_cfg())
    out = tmp_path / "report.json"
    assert main(["run", "--config", cfg_path, "--out", str(out)]) == 0
    report = _report(out)
    assert report["command"] == "run"
    assert report["results"]["estimate"]["value"] == pytest.approx(
        0.5, abs=1e-12)
    assert report["config"]["estimator"] == "girsanov"
    assert report["config"]["n_paths"] == 200
    assert "version" in report
    assert report["wall_clock_s"] > 0


def test_run_report_roundtrips(tmp_path):
    cfg_path = _write(tmp_path, "g.json", _girsanov_cfg())
    out = tmp_path / "report.json"
    main(["run", "--config", cfg_path, "--out", str(out)])
    report = _report(out)
    assert json.loads(json.dumps(report)) == report


def test_run_unknown_model_exits_2(tmp_path, capsys):
    cfg = _girsanov_cfg(model_mu={"id": "levy", "params": {}})
    cfg_path = _write(tmp_path, "bad.json", cfg)
    out = tmp_path / "report.json"
    assert main(["run", "--config", cfg_path, "--out", str(out)]) == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_run_unknown_top_key_exits_2(tmp_path):
    cfg = _girsanov_cfg()
    cfg["paths"] = 100
    assert main(["run", "--config", _write(tmp_path, "k.json", cfg)]) == 2


def test_run_unknown_estimator_param_exits_2(tmp_path):
    cfg = _girsanov_cfg(estimator_params={"tol": 1e-6})
    assert main(["run", "--config", _write(tmp_path, "p.json", cfg)]) == 2


def test_run_unknown_model_param_exits_2(tmp_path):
    cfg = _girsanov_cfg(
        model_mu={"id": "constant_drift", "params": {"thota": 1.0}})
    assert main(["run", "--config", _write(tmp_path, "m.json", cfg)]) == 2


def test_run_chain_requires_dyadic_steps(tmp_path, capsys):
    cfg = _girsanov_cfg(estimator="chain",
                        estimator_params={"levels": 3},
                        grid={"horizon": 1.0, "steps": 100})
    assert main(["run", "--config", _write(tmp_path, "c.json", cfg)]) == 2
    assert "power of two" in capsys.readouterr().err


def test_run_chain_sweep_csv(tmp_path, capsys):
    cfg = _girsanov_cfg(estimator="chain",
                        estimator_params={"levels": 3},
                        grid={"horizon": 1.0, "steps": 64},
                        n_paths=300)
    cfg_path = _write(tmp_path, "c.json", cfg)
    assert main(["run", "--config", cfg_path, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["level", "mesh", "value", "std_error", "slope"]
    assert len(rows) == 4
    values = [float(r[2]) for r in rows[1:]]
    assert values[-1] == pytest.approx(0.5, rel=0.2)


def test_run_sanov_csv(tmp_path, capsys):
    cfg = _girsanov_cfg(
        model_mu={"id": "brownian", "params": {}},
        estimator="sanov",
        estimator_params={"observable": "terminal", "threshold": 1.0,
                          "n_list": [2, 5], "trials": 500},
        grid={"horizon": 1.0, "steps": 16})
    cfg_path = _write(tmp_path, "s.json", cfg)
    assert main(["run", "--config", cfg_path, "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0][:5] == ["n", "count", "p_hat", "rate", "std_error"]
    assert len(rows) == 3


def test_run_sanov_missing_params_exits_2(tmp_path):
    cfg = _girsanov_cfg(estimator="sanov",
                        estimator_params={"observable": "terminal"})
    assert main(["run", "--config", _write(tmp_path, "s.json", cfg)]) == 2


def test_run_convergence_failure_writes_partial_report(tmp_path, capsys):
    cfg = {
        "model_mu": {"id": "constant_drift", "params": {"theta": 1.0}},
        "model_P": {"id": "brownian", "params": {}},
        "initial_mu": {"kind": "point", "point": [0.0]},
        "initial_P": {"kind": "point", "point": [0.0]},
        "grid": {"horizon": 1.0, "steps": 32},
        "estimator": "dv-marginal",
        "estimator_params": {"t": 1.0, "n_samples": 2000, "max_iter": 4,
                             "plateau_rtol": 1e-9},
        "seed": 0,
    }
    cfg_path = _write(tmp_path, "dv.json", cfg)
    out = tmp_path / "partial.json"
    code = main(["run", "--config", cfg_path, "--out", str(out)])
    assert code == 3
    partial = _report(out)
    assert partial["results"]["status"] == "ConvergenceError"
    assert partial["results"]["best_value"] is not None
    assert partial["results"]["best_value"] > 0


def test_run_capability_error_exits_4(tmp_path, capsys):
    cfg = _girsanov_cfg(
        initial_mu={"kind": "empirical", "samples": [[0.0], [0.1]]},
        initial_P={"kind": "point", "point": [0.0]})
    assert main(["run", "--config", _write(tmp_path, "cap.json", cfg)]) == 4


def test_seed_override_changes_monte_carlo(tmp_path):
    cfg = _girsanov_cfg(model_mu={"id": "ou", "params": {"gamma": 1.0}})
    cfg_path = _write(tmp_path, "ou.json", cfg)
    outs = []
    for seed, name in ((None, "a.json"), (123, "b.json")):
        out = tmp_path / name
        argv = ["run", "--config", cfg_path, "--out", str(out)]
        if seed is not None:
            argv += ["--seed", str(seed)]
        assert main(argv) == 0
        outs.append(_report(out))
    assert outs[0]["config"]["seed"] == 0
    assert outs[1]["config"]["seed"] == 123
    assert (outs[0]["results"]["estimate"]["value"]
            != outs[1]["results"]["estimate"]["value"])


def test_thread_count_invisible_in_report(tmp_path):
    cfg_path = _write(tmp_path, "g.json",
                      _girsanov_cfg(model_mu={"id": "ou",
                                              "params": {"gamma": 1.0}}))
    bodies = []
    for threads, name in ((1, "t1.json"), (4, "t4.json")):
        out = tmp_path / name
        assert main(["run", "--config", cfg_path, "--out", str(out),
                     "--threads", str(threads)]) == 0
        body = _report(out)
        body.pop("wall_clock_s")
        bodies.append(json.dumps(body, sort_keys=True))
    assert bodies[0] == bodies[1]


def test_rerun_same_seed_byte_identical(tmp_path):
    cfg_path = _write(tmp_path, "g.json",
                      _girsanov_cfg(model_mu={"id": "ou",
                                              "params": {"gamma": 1.0}}))
    bodies = []
    for name in ("r1.json", "r2.json"):
        out = tmp_path / name
        assert main(["run", "--config", cfg_path, "--out", str(out)]) == 0
        body = _report(out)
        body.pop("wall_clock_s")
        bodies.append(json.dumps(body, sort_keys=True))
    assert bodies[0] == bodies[1]


# ---------------------------------------------------------------------------
# compare


def test_compare_identical_configs_z_zero(tmp_path, capsys):
    cfg_path = _write(tmp_path, "g.json", _girsanov_cfg())
    assert main(["compare", "--config", cfg_path, "--config",
                 cfg_path]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["z_scores"][0]["z"] == 0.0
    assert report["flags"] == []


def test_compare_girsanov_vs_chain(tmp_path, capsys):
    g = _write(tmp_path, "g.json", _girsanov_cfg(
        model_mu={"id": "ou", "params": {"gamma": 1.0}},
        grid={"horizon": 1.0, "steps": 128}, n_paths=2000))
    c = _write(tmp_path, "c.json", _girsanov_cfg(
        model_mu={"id": "ou", "params": {"gamma": 1.0}},
        grid={"horizon": 1.0, "steps": 128}, n_paths=2000,
        estimator="chain", estimator_params={}))
    assert main(["compare", "--config", g, "--config", c]) == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["z_scores"][0]["z"]) <= 3.0


def test_compare_flags_infinite_row(tmp_path, capsys):
    base = dict(model_mu={"id": "brownian", "params": {"a": 2.0}},
                model_P={"id": "brownian", "params": {"a": 1.0}},
                grid={"horizon": 1.0, "steps": 32}, n_paths=100)
    g = _write(tmp_path, "g.json", _girsanov_cfg(**base))
    c = _write(tmp_path, "c.json",
               _girsanov_cfg(estimator="chain", estimator_params={},
                             **base))
    assert main(["compare", "--config", g, "--config", c]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["flags"] == ["girsanov"]
    assert report["z_scores"][0]["z"] is None


def test_compare_rejects_different_scenarios(tmp_path):
    a = _write(tmp_path, "a.json", _girsanov_cfg())
    b = _write(tmp_path, "b.json",
               _girsanov_cfg(grid={"horizon": 2.0, "steps": 50}))
    assert main(["compare", "--config", a, "--config", b]) == 2


def test_compare_rejects_sanov(tmp_path):
    g = _write(tmp_path, "g.json", _girsanov_cfg(
        model_mu={"id": "brownian", "params": {}}))
    s = _write(tmp_path, "s.json", _girsanov_cfg(
        model_mu={"id": "brownian", "params": {}},
        estimator="sanov",
        estimator_params={"observable": "terminal", "threshold": 1.0,
                          "n_list": [2], "trials": 200}))
    assert main(["compare", "--config", g, "--config", s]) == 2


def test_compare_needs_two_configs(tmp_path):
    g = _write(tmp_path, "g.json", _girsanov_cfg())
    assert main(["compare", "--config", g]) == 2


# ---------------------------------------------------------------------------
# other commands


def test_list_models(capsys):
    assert main(["list-models"]) == 0
    out = capsys.readouterr().out
    for model_id in ("brownian", "constant_drift", "ou", "double_well",
                     "linear", "sine_diffusion"):
        assert model_id in out
    assert "gamma" in out


def test_self_test_passes(capsys):
    assert main(["self-test"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert "FAIL" not in out


def test_empirical_initial_config(tmp_path):
    import numpy as np
    rng = np.random.default_rng(0)
    samples = [[float(v)] for v in rng.normal(size=300)]
    cfg = _girsanov_cfg(
        initial_mu={"kind": "empirical", "samples": samples},
        initial_P={"kind": "gaussian", "mean": [0.0],
                   "covariance": [[1.0]]},
        n_paths=300)
    out = tmp_path / "emp.json"
    assert main(["run", "--config", _write(tmp_path, "e.json", cfg),
                 "--out", str(out)]) == 0
    report = _report(out)
    assert report["results"]["estimate"]["value"] >= 0.0


def test_run_rejects_bad_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) == 2
