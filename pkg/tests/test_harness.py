import math

import numpy as np
import pytest

from qrex.errors import ConfigurationError
from qrex.harness import (
    AggregateResult,
    SeedResult,
    aggregate,
    config_from_csv,
    emit_csv,
    parse_config,
    read_csv,
    render_csv,
    run_experiment,
    run_single,
)

SMALL = {
    "gridworld": ["K=3", "B=200", "checkpoint_every=200"],
    "baird": ["K=3", "checkpoint_every=250"],
    "lds": ["K=3", "checkpoint_every=100"],
    "mountaincar": ["K=3", "episode_cap=2000"],
    "randomwalk": ["K=5", "checkpoint_every=1"],
}


def _small(name, *extra, seeds=2):
    return parse_config(None, [f"experiment={name}", f"seeds={seeds}", *SMALL[name], *extra], environ={})


def test_gridworld_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    cfg = parse_config(path, ["experiment=gridworld"], environ={})
    assert (cfg.gamma, cfg.eta, cfg.B, cfg.N, cfg.combine) == (0.9, 0.05, 3000, 1, "II")
    assert cfg.seeds == 30


def test_baird_defaults():
    cfg = parse_config(None, {"experiment": "baird"}, environ={})
    assert cfg.gamma == 0.99 and cfg.eta == pytest.approx(0.01 / math.sqrt(5))
    assert (cfg.B, cfg.u, cfg.N) == (50, 0, 5)
    assert cfg.init_w == 1.0


def test_every_field_has_a_default():
    cfg = parse_config(None, [], environ={})
    assert cfg.experiment == "gridworld"


def test_unknown_key_rejected_with_name():
    with pytest.raises(ConfigurationError, match="etaa"):
        parse_config(None, ["etaa=0.1"], environ={})
    with pytest.raises(ConfigurationError, match="bogus"):
        parse_config(None, ["experiment=lds", "env.bogus=1"], environ={})


def test_type_and_constraint_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigurationError, match="K"):
        parse_config(None, ["K=many"], environ={})
    with pytest.raises(ConfigurationError, match="data_mode"):
        parse_config(None, ["algorithm=qrexdare", "data_mode=fresh"], environ={})
    with pytest.raises(ConfigurationError, match="target_mode"):
        parse_config(None, ["algorithm=vanilla", "target_mode=frozen"], environ={})
    with pytest.raises(ConfigurationError):
        parse_config(None, ["experiment=gridworld", "algorithm=epiqrex"], environ={})
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "missing.yaml", [], environ={})
    bad = tmp_path / "list.yaml"
    bad.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError):
        parse_config(bad, [], environ={})


def test_yaml_file_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("experiment: lds\nK: 4\nenv:\n  sigma: 0.5\n")
    cfg = parse_config(path, ["env.rho=0.8", "K=6"], environ={})
    assert cfg.K == 6 and cfg.env["sigma"] == 0.5 and cfg.env["rho"] == 0.8 and cfg.env["dim"] == 5


def test_master_seed_env_var():
    cfg = parse_config(None, ["base_seed=3"], environ={"QREX_MASTER_SEED": "41"})
    assert cfg.base_seed == 41
    with pytest.raises(ConfigurationError):
        parse_config(None, [], environ={"QREX_MASTER_SEED": "x"})


def test_jobs_must_be_positive():
    with pytest.raises(ConfigurationError):
        run_experiment(_small("gridworld"), jobs=0)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_small_runs_produce_increasing_axes(name):
    result = run_experiment(_small(name))
    assert len(result.seeds) == 2
    for s in result.seeds:
        xs = {}
        for x, metric, _ in s.rows:
            xs.setdefault(metric, []).append(x)
        for seq in xs.values():
            assert all(b > a for a, b in zip(seq, seq[1:]))
    assert result.x_unit == ("episodes" if name in ("mountaincar", "randomwalk") else "samples")


def test_single_seed_mean_equals_run():
    cfg = _small("gridworld", seeds=1)
    result = run_experiment(cfg)
    x, mean, stderr, count = result.curves["sup_error"]
    seed_vals = [v for _, m, v in result.seeds[0].rows if m == "sup_error"]
    np.testing.assert_array_equal(mean, seed_vals)
    assert np.all(count == 1)


def test_aggregate_handles_divergent_seed():
    cfg = _small("gridworld")
    rows_a = [(100, "sup_error", 1.0), (200, "sup_error", 0.5)]
    rows_b = [(100, "sup_error", 3.0)]
    res = aggregate(cfg, [SeedResult(0, "samples", rows_a, False, 0, 0), SeedResult(1, "samples", rows_b, True, 0, 0)])
    x, mean, stderr, count = res.curves["sup_error"]
    np.testing.assert_array_equal(x, [100, 200])
    np.testing.assert_allclose(mean, [2.0, 0.5])
    np.testing.assert_array_equal(count, [2, 1])
    assert res.diverged_seeds == [1]
    assert isinstance(res, AggregateResult)


def test_seeds_follow_base_seed():
    cfg = _small("gridworld", "base_seed=10", seeds=3)
    result = run_experiment(cfg)
    assert [s.seed for s in result.seeds] == [10, 11, 12]
    first = run_single(cfg, 11)
    assert first.final_w is not None


def test_csv_schema_and_round_trip(tmp_path):
    cfg = _small("lds")
    result = run_experiment(cfg)
    path = tmp_path / "out.csv"
    emit_csv(result, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0].startswith("# config: ")
    header = next(ln for ln in lines if not ln.startswith("#"))
    assert header == "experiment,algorithm,seed,x_unit,x,metric,value"
    data = read_csv(path)
    assert {r["seed"] for r in data.rows} == {"0", "1", "mean", "stderr"}
    x, mean = data.curve("l2_weight_error")
    rx, rmean, _, _ = result.curves["l2_weight_error"]
    np.testing.assert_array_equal(x, rx)
    np.testing.assert_array_equal(mean, [float(format(v, ".12g")) for v in rmean])
    assert config_from_csv(path) == cfg


def test_zero_checkpoints_gives_header_only_csv():
    cfg = _small("gridworld", seeds=1)
    empty = AggregateResult(cfg, [SeedResult(0, "samples", [], False, 0, 0)], {}, {})
    body = [ln for ln in render_csv(empty).splitlines() if not ln.startswith("#")]
    assert body == ["experiment,algorithm,seed,x_unit,x,metric,value"]


def test_env_params_in_header():
    text = render_csv(run_experiment(_small("baird", seeds=1)))
    assert '"embedding": "shared"' in text.splitlines()[1]


def test_jobs_do_not_change_output():
    cfg = _small("gridworld", seeds=3)
    assert render_csv(run_experiment(cfg, jobs=1)) == render_csv(run_experiment(cfg, jobs=2))


def test_custom_tabular(tmp_path):
    from qrex.mdp import TabularModel

    path = tmp_path / "m.txt"
    TabularModel.random(4, 2, 0.8, np.random.default_rng(0)).save(path)
    cfg = parse_config(None, ["experiment=custom-tabular", f"env.model_path={path}", "K=2", "B=50"], environ={})
    result = run_experiment(cfg)
    assert "sup_error" in result.curves
    with pytest.raises(ConfigurationError, match="model_path"):
        parse_config(None, ["experiment=custom-tabular"], environ={})


@pytest.mark.parametrize("algorithm", ["qrex", "qrexdare", "vanilla", "otl_er_q", "er_q", "otl_q"])
def test_every_algorithm_runs_on_gridworld(algorithm):
    result = run_experiment(_small("gridworld", f"algorithm={algorithm}", seeds=1))
    assert np.all(np.isfinite(result.final("sup_error")))
