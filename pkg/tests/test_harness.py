import csv
import json

import numpy as np
import pytest

from heavysep.cli import main
from heavysep.errors import ConfigError
from heavysep.evolution import classify_regime
from heavysep.harness import (
    ExperimentConfig,
    load_config_file,
    replica_rng,
    resolve_config,
    run,
    run_replicas,
    sweep_phase_diagram,
    verify_hydro,
)
from heavysep.kernel import ModelParams


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_precedence_file_env_cli(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("gamma: 0.5\ntheta: 0.3\nalpha: 0.1\nN_grid: [16, 32]\n")
    env = {"HEAVYSEP_THETA": "0.7", "HEAVYSEP_ALPHA": "0.15", "UNRELATED": "x"}
    cfg = resolve_config({"alpha": 0.3}, str(path), env, task="stationary")
    assert cfg.gamma == 0.5  # file
    assert cfg.theta == 0.7  # env beats file
    assert cfg.alpha == 0.3  # CLI beats env
    assert cfg.N_grid == [16, 32]
    assert cfg.beta == ExperimentConfig().beta


def test_json_config_and_grid_strings(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"theta_grid": "-1, 0, 0.5", "N": 20}))
    cfg = resolve_config(None, str(path), {}, task="sweep")
    assert cfg.theta_grid == [-1.0, 0.0, 0.5]
    assert cfg.N == 20


@pytest.mark.parametrize(
    "cli,env,text",
    [
        ({"bogus": 1}, {}, None),
        ({}, {"HEAVYSEP_BOGUS": "1"}, None),
        ({}, {}, "gamma: [1, 2]\n"),
        ({}, {}, "- just\n- a list\n"),
        ({}, {}, "gamma: : :\n"),
        ({"gamma": 1.0}, {}, None),
        ({"alpha": 1.5}, {}, None),
        ({"T": -1.0}, {}, None),
        ({"replicas": 0}, {}, None),
        ({"regime_override": "Nope"}, {}, None),
        ({"panels": 1}, {}, None),
    ],
)
def test_config_errors(tmp_path, cli, env, text):
    path = None
    if text is not None:
        path = tmp_path / "bad.yaml"
        path.write_text(text)
    with pytest.raises(ConfigError):
        resolve_config(cli, path and str(path), env, task="stationary")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.yaml")


def test_empty_config_file(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config_file(path) == {}


def test_content_hash_ignores_output_location():
    a = ExperimentConfig(out="x", workers=1)
    b = ExperimentConfig(out="y", workers=4)
    assert a.content_hash() == b.content_hash()
    assert a.content_hash() != ExperimentConfig(seed=1).content_hash()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["stationary", "--N", "16"], environ={}) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["task"] == "stationary"
    assert main(["stationary", "--gamma", "1.0"], environ={}) == 2
    assert main(["stationary"], environ={"HEAVYSEP_NOPE": "1"}) == 2
    assert main(["stationary", "--config", str(tmp_path / "none.yaml")], environ={}) == 2
    code = main(
        ["verify-operator", "--panels", "2", "--epsilon", "0.1", "--N-grid", "64", "--test-function", "sin"],
        environ={},
    )
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_negative_grid_values(capsys):
    code = main(["sweep", "--N", "16", "--gamma-grid", "0.5,1.5", "--theta-grid=-1,0,0.5"], environ={})
    assert code == 0
    payload = json.loads(capsys.readouterr().out)["payload"]
    assert payload["cells"] == 6 and payload["failed"] == 0


def test_byte_identical_outputs(tmp_path):
    out = tmp_path / "run"
    blobs = []
    for _ in range(2):
        cfg = ExperimentConfig(task="simulate", N=12, T=0.02, times=2, replicas=4, seed=7, out=str(out))
        run(cfg)
        blobs.append({name: (out / name).read_bytes() for name in ("results.csv", "summary.json")})
    assert blobs[0] == blobs[1]
    other = tmp_path / "other"
    run(ExperimentConfig(task="simulate", N=12, T=0.02, times=2, replicas=4, seed=7, out=str(other)))
    assert (other / "results.csv").read_bytes() == blobs[0]["results.csv"]
    meta = json.loads((out / "run_meta.json").read_text())
    assert "wall_seconds" in meta


def test_workers_match_sequential():
    p = ModelParams(10, 1.5, 0.0, 1.0, 0.2, 0.8)
    times = np.linspace(0, 0.02, 3)
    seq = run_replicas(p, 0.5, 0.02, times, 4, 3, workers=1)
    par = run_replicas(p, 0.5, 0.02, times, 4, 3, workers=2)
    np.testing.assert_array_equal(seq.profiles, par.profiles)
    np.testing.assert_array_equal(seq.replica_ids, par.replica_ids)


def test_adding_replicas_keeps_existing_streams():
    p = ModelParams(10, 0.7, 0.5, 1.0, 0.2, 0.8)
    times = np.linspace(0, 0.05, 3)
    few = run_replicas(p, 0.5, 0.05, times, 3, 11)
    many = run_replicas(p, 0.5, 0.05, times, 6, 11)
    np.testing.assert_array_equal(few.profiles, many.profiles[:3])
    a, b = replica_rng(11, 2).random(4), replica_rng(11, 2).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, replica_rng(11, 3).random(4))


def test_stationary_task_flat_when_alpha_equals_beta(tmp_path):
    rec = run(ExperimentConfig(task="stationary", N=32, alpha=0.4, beta=0.4, out=str(tmp_path)))
    rows = _read_csv(tmp_path / "results.csv")
    assert len(rows) == 31
    assert all(r["time"] == "inf" for r in rows)
    np.testing.assert_allclose([float(r["value"]) for r in rows], 0.4, atol=1e-12)
    assert rec.payload["regime"] == classify_regime(1.5, 0.0).value
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert set(summary["units"]) == {"time", "x_over_N", "value", "se"}


def test_evolve_task_rows():
    rec = run(ExperimentConfig(task="evolve", N=16, T=0.05, times=4))
    assert len(rec.rows) == 5 * 15
    assert rec.rows[0][0] == 0.0 and rec.rows[-1][0] == pytest.approx(0.05)


def test_verify_operator_monotone(tmp_path):
    rec = run(ExperimentConfig(task="verify-operator", gamma=1.5, N_grid=[128, 256, 512, 1024], out=str(tmp_path)))
    values = [float(r["e_N"]) for r in _read_csv(tmp_path / "results.csv")]
    assert all(b < a for a, b in zip(values, values[1:]))
    assert rec.payload["strictly_decreasing"] is True


def test_sweep_labels_and_isolation(tmp_path):
    cfg = ExperimentConfig(task="sweep", N=24, gamma_grid=[0.5, 1.0, 1.5], theta_grid=[-1.0, 0.0, 0.2, 0.5, 2.0], out=str(tmp_path))
    rec = run(cfg)
    assert rec.payload["failed"] == 5  # the gamma = 1 row
    for row in rec.rows:
        if row["gamma"] == 1.0:
            assert row["status"] == "error" and row["message"]
        else:
            assert row["regime"] == classify_regime(row["gamma"], row["theta"]).value
    files = sorted(p.name for p in (tmp_path / "profiles").iterdir())
    assert len(files) == 10 and files[0] == "cell_000_000.csv"


def test_sweep_flat_when_alpha_equals_beta():
    rows, profiles = sweep_phase_diagram([0.5, 1.5], [-1.0, 0.0, 1.0], N=24, alpha=0.3, beta=0.3)
    assert all(r["status"] == "ok" for r in rows)
    for prof in profiles.values():
        np.testing.assert_allclose(prof, 0.3, atol=1e-12)


def test_sweep_dirichlet_endpoints_approach_reservoirs():
    gaps = []
    for N in (64, 128, 256):
        rows, _ = sweep_phase_diagram([1.5], [0.2], N=N)
        gaps.append((abs(rows[0]["left_block"] - 0.2), abs(rows[0]["right_block"] - 0.8)))
    assert gaps[0][0] > gaps[1][0] > gaps[2][0]
    assert gaps[0][1] > gaps[1][1] > gaps[2][1]


def test_verify_hydro_equilibrium():
    p = ModelParams(16, 1.5, 0.0, 1.0, 0.5, 0.5)
    cfg = ExperimentConfig(times=2, seed=3)
    report, ens, ode = verify_hydro(p, 0.02, 100, cfg)
    assert report["max_standardized_gap"] < 5
    np.testing.assert_allclose(ode.values, 0.5, atol=1e-12)
    # lattice Riemann pairing: spatial error is O(1/N)
    assert report["weak_residual"] < 1e-4
    assert ens.R == 100


def test_verify_hydro_override_is_negative_control():
    # the true functional's residual shrinks with N, the forced one does not
    p = ModelParams(96, 1.5, 0.2, 1.0, 0.2, 0.8)
    cfg = ExperimentConfig(times=4, regime_override="FracDiffusion-Neumann", seed=1)
    report, _, _ = verify_hydro(p, 0.05, 2, cfg)
    assert report["regime"] == "FracDiffusion-Dirichlet"
    assert report["override"]["residual"] > 10 * report["weak_residual"]
    assert report["boundary_integrability"] > 0


def test_verify_hydro_reaction_gap_decreases():
    gaps = []
    for N in (32, 64):
        report, _, _ = verify_hydro(ModelParams(N, 0.5, -1.0, 1.0, 0.2, 0.8), 0.2, 2, ExperimentConfig(times=4))
        gaps.append(report["reaction_gap"])
    assert gaps[1] < gaps[0]
