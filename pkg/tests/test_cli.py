from click.testing import CliRunner

from qrex.cli import cli
from qrex.harness import read_csv


def _run(*args, env=None):
    return CliRunner().invoke(cli, list(args), env=env or {"QREX_MASTER_SEED": ""})


def test_list_experiments():
    res = _run("list-experiments")
    assert res.exit_code == 0
    for name in ("gridworld", "randomwalk", "mountaincar", "baird", "lds", "custom-tabular"):
        assert name in res.output


def test_verify_quick_passes():
    res = _run("verify")
    assert res.exit_code == 0, res.output
    assert res.output.count("PASS") == 8 and "FAIL" not in res.output


def test_run_writes_csv(tmp_path):
    out = tmp_path / "g.csv"
    res = _run("run", "--set", "experiment=gridworld", "--set", "K=2", "--set", "B=100",
               "--set", "checkpoint_every=100", "--seeds", "2", "--jobs", "1", "--out", str(out))
    assert res.exit_code == 0, res.output
    data = read_csv(out)
    assert data.config["seeds"] == 2
    assert {r["seed"] for r in data.rows} == {"0", "1", "mean", "stderr"}


def test_run_config_file_and_stdout(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: baird\nK: 2\n")
    res = _run("run", "--config", str(cfg), "--seeds", "1")
    assert res.exit_code == 0
    assert "experiment,algorithm,seed,x_unit,x,metric,value" in res.output


def test_master_seed_env_var(tmp_path):
    out = tmp_path / "s.csv"
    res = _run("run", "--set", "experiment=lds", "--set", "K=1", "--seeds", "1", "--out", str(out),
               env={"QREX_MASTER_SEED": "77"})
    assert res.exit_code == 0
    assert {r["seed"] for r in read_csv(out).rows} == {"77", "mean", "stderr"}


def test_configuration_errors_exit_1(tmp_path):
    assert _run("run", "--set", "etaa=0.1").exit_code == 1
    assert _run("run", "--set", "K=0").exit_code == 1
    assert _run("run", "--jobs", "0").exit_code == 1
    assert _run("run", "--config", str(tmp_path / "nope.yaml")).exit_code == 1
    res = _run("run", "--set", "etaa=0.1")
    assert "etaa" in res.output


def test_runtime_failure_exits_3(monkeypatch):
    import qrex.harness

    def boom(cfg, seed):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(qrex.harness, "run_single", boom)
    res = _run("run", "--set", "experiment=gridworld", "--set", "K=1", "--seeds", "1", "--set", "base_seed=5")
    assert res.exit_code == 3
    assert "seed 5" in res.output


def test_verification_failure_exits_2(monkeypatch):
    import qrex.cli
    from qrex.verify import CheckResult

    monkeypatch.setattr(qrex.cli, "verify_suite",
                        lambda scale: [CheckResult("broken", False, 1.0, 0.0, "synthetic", 0.0)])
    res = _run("verify")
    assert res.exit_code == 2
    assert "FAIL" in res.output
