import json

import numpy as np
import pytest

from mdbd import cli
from mdbd.harness import (
    ConfigError,
    build_instance,
    cmd_bench,
    cmd_gen,
    cmd_run,
    cmd_verify,
    config_hash,
    fit_exponent,
    load_config,
    output_dir,
)


def _scalar_cfg(tmp_path, **integrator):
    return load_config(overrides={
        "family": {"name": "scalar2"},
        "integrator": {"step": 0.01, "horizon": 2.0, "record_every": 10, **integrator},
        "output": {"dir": str(tmp_path / "out")},
    })


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg["family"] == {"name": "simplex", "N": 10, "n": 4, "seed": 7, "params": {}}
        assert cfg["integrator"]["step"] == 1e-3

    def test_file_and_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"family": {"seed": 3}, "integrator": {"horizon": 5.0}}))
        cfg = load_config(p, {"family": {"n": 6}})
        assert (cfg["family"]["seed"], cfg["family"]["n"], cfg["integrator"]["horizon"]) == (3, 6, 5.0)

    def test_malformed_json_reports_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "family": {"seed": 3,}\n}')
        with pytest.raises(ConfigError, match="line 2"):
            load_config(p)

    @pytest.mark.parametrize(
        "override, field",
        [
            ({"family": {"seed": -1}}, "family.seed"),
            ({"family": {"colour": 1}}, "family.colour"),
            ({"integrator": {"scheme": "leapfrog"}}, "integrator"),
            ({"algorithm": {"name": "admm"}}, "algorithm.name"),
            ({"extras": {}}, "extras"),
            ({"family": {"params": {"bogus": 1}}}, "family.params"),
        ],
    )
    def test_invalid_fields_named(self, override, field):
        with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
            load_config(overrides=override)

    def test_hash_ignores_output(self):
        a = load_config(overrides={"output": {"dir": "x"}})
        b = load_config(overrides={"output": {"dir": "y"}})
        c = load_config(overrides={"family": {"seed": 8}})
        assert config_hash(a) == config_hash(b) != config_hash(c)

    def test_output_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv("MDBD_OUTPUT_DIR", str(tmp_path))
        assert output_dir(load_config()) == tmp_path

    def test_edge_weight_reaches_graph(self):
        net = build_instance(load_config(overrides={"graph": {"weight": 0.5}}))
        assert net.graph.weights[0, 1] == 0.5


class TestRun:
    def test_artifacts(self, tmp_path):
        res = cmd_run(_scalar_cfg(tmp_path))
        assert res.exit_code == 0
        names = {p.name for p in res.directory.iterdir()}
        assert names == {"instance.json", "saddle.json", "trajectory.csv", "diagnostics.csv",
                         "summary.json", "timing.json"}
        summary = json.loads((res.directory / "summary.json").read_text())
        assert summary["status"] == "OK" and summary["config_hash"] == config_hash(_scalar_cfg(tmp_path))
        assert "output" not in summary["config"]
        first = (res.directory / "trajectory.csv").read_text().splitlines()[0]
        assert first == f"# config_hash={summary['config_hash']} seed=7"

    def test_divergence_exit_code(self, tmp_path):
        res = cmd_run(_scalar_cfg(tmp_path, step=5.0, horizon=500.0, record_every=1))
        assert res.exit_code == 3 and res.summary["status"] == "DIVERGED"

    def test_oracle_failure_exit_code(self, tmp_path):
        cfg = _scalar_cfg(tmp_path)
        cfg["oracle"]["tol"] = 1e-40
        res = cmd_run(cfg)
        assert res.exit_code == 4 and res.summary["status"] == "ORACLE_FAILED"

    def test_projection_baseline(self, tmp_path):
        cfg = _scalar_cfg(tmp_path)
        cfg["algorithm"]["name"] = "projection"
        assert cmd_run(cfg).exit_code == 0


class TestVerify:
    @pytest.fixture(scope="class")
    @classmethod
    def generated(cls, tmp_path_factory):
        d = tmp_path_factory.mktemp("gen")
        cfg = load_config(overrides={"family": {"N": 4, "n": 3, "seed": 2}, "output": {"dir": str(d)}})
        return cmd_gen(cfg, with_oracle=True)

    def test_all_pass(self, generated):
        lines = []
        ok, results = cmd_verify(*generated, echo=lines.append)
        assert ok and all(line.startswith("PASS") for line in lines)
        assert [r[0] for r in results] == ["connectivity", "slater", "x_in_sets", "lambda_nonnegative",
                                           "kkt_residual", "saddle_inequalities"]

    def test_tampered_saddle_fails(self, generated, tmp_path):
        doc = json.loads(generated[1].read_text())
        doc["z_star"]["mu"][0][0] += 0.5
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        ok, results = cmd_verify(generated[0], bad, echo=lambda s: None)
        assert not ok and dict((r[0], r[1]) for r in results)["kkt_residual"] is False

    def test_negative_multiplier_fails(self, generated, tmp_path):
        doc = json.loads(generated[1].read_text())
        doc["z_star"]["lambda"][1][0] = -1.0
        bad = tmp_path / "neg.json"
        bad.write_text(json.dumps(doc))
        ok, results = cmd_verify(generated[0], bad, echo=lambda s: None)
        assert not ok and ("lambda_nonnegative", False) in [(r[0], r[1]) for r in results]

    def test_disconnected_graph_fails(self, generated, tmp_path):
        doc = json.loads(generated[0].read_text())
        doc["graph"]["edges"] = [e for e in doc["graph"]["edges"] if 0 not in e[:2]]
        bad = tmp_path / "inst.json"
        bad.write_text(json.dumps(doc))
        ok, results = cmd_verify(bad, echo=lambda s: None)
        assert not ok and results[0][:2] == ("connectivity", False)


class TestBench:
    def test_fit_exponent(self):
        dims = np.array([8.0, 16.0, 32.0])
        assert fit_exponent(dims, 3e-4 * dims**1.5) == pytest.approx(1.5)

    def test_small_table(self, tmp_path):
        cfg = load_config(overrides={"family": {"N": 3}, "output": {"dir": str(tmp_path)}})
        rows, exps = cmd_bench([4, 8], cfg, limit=5.0, echo=lambda s: None, repeats=1)
        assert len(rows) == 6 and set(exps) == {"mdbd", "projection-fast", "projection-generic-qp"}
        assert (tmp_path / "bench.csv").read_text().startswith("# config_hash=")
        assert all(r["time_to_threshold"] for r in rows)

    def test_dims_must_be_sorted(self, tmp_path):
        with pytest.raises(ValueError):
            cmd_bench([8, 4], load_config(overrides={"output": {"dir": str(tmp_path)}}), to_threshold=False)


class TestCli:
    def test_gen_and_verify(self, tmp_path, capsys):
        assert cli.main(["gen", "--N", "3", "--n", "3", "--oracle", "--out", str(tmp_path)]) == 0
        assert cli.main(["verify", str(tmp_path / "instance.json"), str(tmp_path / "saddle.json")]) == 0
        assert "PASS kkt_residual" in capsys.readouterr().out

    def test_run_scalar(self, tmp_path, capsys):
        code = cli.main(["run", "--family", "scalar2", "--h", "0.01", "--T", "1", "--out", str(tmp_path)])
        assert code == 0 and '"status": "OK"' in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            cli.main(["run", "--h", "0.3", "--T", "1", "--out", str(tmp_path)])
        assert info.value.code == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            cli.main(["plot"])
