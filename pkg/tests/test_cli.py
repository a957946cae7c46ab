"""Command-line plumbing: config precedence, named constraint errors, exit
codes, run-directory layout, and idempotent dispatch.

Everything runs in-process through ``main(argv)`` — no subprocesses — so the
exit statuses and stderr summaries are asserted directly.
"""

import json

import numpy as np
import pytest

from subdiff.cli import ConfigError, main, parse_config


def run_cli(*args):
    return main(list(args))


def stderr_payload(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


# --- parse_config -----------------------------------------------------------------


def test_defaults_fill_per_subcommand():
    cfg = parse_config("solve-renewal")
    assert cfg.subcommand == "solve-renewal"
    assert cfg.T == 1e4 and cfg.dt == 0.125
    assert cfg.alpha == 0.5 and cfg.K == 1.0
    cfg2 = parse_config("experiment-convergence")
    assert cfg2.T == 1.0 and cfg2.L == 25.6 and cfg2.h == 0.05


def test_file_then_set_then_flag_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[model]\nalpha = 0.4\n[run]\nseed = 1\nT = 500\ndt = 0.25\n")
    cfg = parse_config(
        "solve-renewal", config_path=str(path), overrides=["T=1000"], seed=9
    )
    assert cfg.alpha == 0.4  # from file
    assert cfg.T == 1000.0  # --set beats file
    assert cfg.seed == 9  # flag beats both


def test_flat_file_without_sections(tmp_path):
    path = tmp_path / "flat.cfg"
    path.write_text("subcommand = validate\nalpha = 0.3\n")
    cfg = parse_config(config_path=str(path))
    assert cfg.subcommand == "validate"
    assert cfg.alpha == 0.3


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown config keys: alhpa"):
        parse_config("validate", overrides=["alhpa=0.5"])


def test_duplicate_key_across_sections(tmp_path):
    path = tmp_path / "dup.cfg"
    path.write_text("[a]\nT = 1\n[b]\nT = 2\n")
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config("solve-renewal", config_path=str(path))


def test_named_constraint_messages():
    with pytest.raises(ConfigError, match=r"alpha must lie in \(0,1\)"):
        parse_config("validate", overrides=["alpha=1.5"])
    with pytest.raises(ConfigError, match=r"delta must lie in \(0, 1-alpha\)"):
        parse_config("validate", overrides=["delta=0.6"])
    with pytest.raises(ConfigError, match="K must be positive"):
        parse_config("validate", overrides=["K=0"])
    with pytest.raises(ConfigError, match="expects a number"):
        parse_config("validate", overrides=["alpha=abc"])
    with pytest.raises(ConfigError, match="eps_list needs at least 4"):
        parse_config("experiment-convergence", overrides=["eps_list=0.2"])
    with pytest.raises(ConfigError, match="strictly decreasing"):
        parse_config("experiment-convergence", overrides=["eps_list=0.2,0.2,0.1,0.05"])
    with pytest.raises(ConfigError, match="power of two"):
        parse_config("solve-fracpde", overrides=["L=100", "h=1"])
    with pytest.raises(ConfigError, match="mu must exceed"):
        parse_config("experiment-renewal", overrides=["alpha=0.5", "mu=0.3"])
    with pytest.raises(ConfigError, match="calibrated cells"):
        parse_config("experiment-msd", overrides=["alphas=0.5,0.9"])
    with pytest.raises(ConfigError, match="unresolvable"):
        parse_config(
            "experiment-convergence",
            overrides=["variant=self-similar", "width=1.5"],
        )
    with pytest.raises(ConfigError, match="subcommand is required"):
        parse_config()


def test_set_requires_key_value():
    with pytest.raises(ConfigError, match="key=value"):
        parse_config("validate", overrides=["alpha"])


# --- exit codes through main -------------------------------------------------------


def test_validate_exits_zero(tmp_path, capsys):
    assert run_cli("validate", "--out", str(tmp_path)) == 0
    run_dir = next(tmp_path.glob("validate-*"))
    payload = json.loads((run_dir / "validation.json").read_text())
    assert payload["passed"] is True
    assert payload["checks"] and all(payload["checks"].values())
    assert (run_dir / "resolved.cfg").exists()


def test_usage_error_exit_2(tmp_path, capsys):
    assert run_cli("validate", "--set", "alpha=2", "--out", str(tmp_path)) == 2
    payload = stderr_payload(capsys)
    assert payload["error"] == "usage"
    assert "alpha must lie in (0,1)" in payload["detail"]


def test_internal_error_exit_3(tmp_path, capsys):
    # a config that passes preflight but explodes in the library: the wrap
    # seam guard fires when the box is far too small for the horizon
    code = run_cli(
        "solve-fracpde",
        "--set", "T=10000", "--set", "dt=0.5", "--set", "L=16", "--set", "h=1",
        "--out", str(tmp_path),
    )
    assert code == 3
    payload = stderr_payload(capsys)
    assert payload["error"] == "internal"
    assert "seam" in payload["detail"]


def test_metric_failure_exit_1(tmp_path, capsys):
    # squeeze the rate band until the (correct) measured rate fails it
    code = run_cli(
        "experiment-convergence",
        "--set", "rate_tol=0.001",
        "--out", str(tmp_path),
    )
    assert code == 1
    payload = stderr_payload(capsys)
    assert payload["error"] == "metrics_failed"
    assert payload["experiment"] == "convergence"
    assert any("rate" in f["name"] for f in payload["failed"])
    # the report is still written, with the failing record in it
    run_dir = next(p for p in tmp_path.iterdir() if p.is_dir())
    report = json.loads((run_dir / "report.json").read_text())
    assert any(not m["pass"] for m in report["metrics"])


def test_bad_subcommand_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 2


# --- solver outputs ------------------------------------------------------------------


def test_solve_renewal_writes_boundary(tmp_path, capsys):
    assert (
        run_cli(
            "solve-renewal",
            "--set", "T=500", "--set", "dt=0.25", "--set", "stride=4",
            "--out", str(tmp_path),
        )
        == 0
    )
    run_dir = next(tmp_path.glob("solve-renewal-*"))
    lines = (run_dir / "boundary.csv").read_text().splitlines()
    assert lines[0] == "t,N,mass"
    assert len(lines) == 1 + 2000 // 4 + 1
    t, N, mass = map(float, lines[1].split(","))
    assert (t, mass) == (0.0, 1.0)
    assert N == pytest.approx(0.4444444444444444)  # pinned: scheme value at t=0, dt=0.25


def test_solve_fracpde_moments_and_profile(tmp_path, capsys):
    assert (
        run_cli(
            "solve-fracpde",
            "--set", "T=100", "--set", "dt=0.5", "--set", "L=64",
            "--out", str(tmp_path),
        )
        == 0
    )
    run_dir = next(tmp_path.glob("solve-fracpde-*"))
    rows = np.loadtxt(run_dir / "moments.csv", delimiter=",", skiprows=1)
    t, mass, m2 = rows[:, 0], rows[:, 1], rows[:, 2]
    assert np.allclose(mass, 1.0, atol=1e-12)
    # point release: the discrete moment identity holds along the whole run
    growth = 2.0 / np.pi * np.sqrt(t[1:])
    assert np.allclose(m2[1:], growth, rtol=1e-8)
    profile = np.loadtxt(run_dir / "final_profile.csv", delimiter=",", skiprows=1)
    assert profile.shape == (64, 2)
    assert profile[:, 1].sum() * 1.0 == pytest.approx(1.0, abs=1e-12)


def test_simulate_ctrw_msd_output(tmp_path, capsys):
    assert (
        run_cli(
            "simulate-ctrw",
            "--set", "n_particles=5000", "--set", "T=1000",
            "--seed", "3",
            "--out", str(tmp_path),
        )
        == 0
    )
    run_dir = next(tmp_path.glob("simulate-ctrw-*"))
    rows = np.loadtxt(run_dir / "msd.csv", delimiter=",", skiprows=1)
    assert rows.shape == (30, 3)
    assert np.all(np.diff(rows[:, 0]) > 0)
    assert np.all(rows[:, 2] > 0)


def test_solve_agepde_eps_lattice_compatibility(tmp_path, capsys):
    code = run_cli(
        "solve-agepde",
        "--set", "T=100", "--set", "dt=0.5", "--set", "L=64", "--set", "eps=0.3",
        "--out", str(tmp_path),
    )
    assert code == 2
    payload = stderr_payload(capsys)
    assert "multiple of h" in payload["detail"]


# --- idempotent dispatch --------------------------------------------------------------


def test_rerun_is_byte_identical(tmp_path, capsys):
    args = (
        "experiment-renewal",
        "--set", "T=1000", "--set", "dt=0.25",
    )
    assert run_cli(*args, "--out", str(tmp_path / "a")) == 0
    assert run_cli(*args, "--out", str(tmp_path / "b")) == 0
    a = sorted(p for p in (tmp_path / "a").rglob("*") if p.is_file())
    b = sorted(p for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert [p.name for p in a] == [p.name for p in b]
    # the resolved config embeds the out dir; everything else matches exactly
    for pa, pb in zip(a, b):
        if pa.name == "resolved.cfg":
            fa = [l for l in pa.read_text().splitlines() if not l.startswith("out")]
            fb = [l for l in pb.read_text().splitlines() if not l.startswith("out")]
            assert fa == fb
        else:
            assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_resolved_config_round_trips(tmp_path, capsys):
    assert (
        run_cli(
            "solve-renewal",
            "--set", "T=500", "--set", "dt=0.25",
            "--out", str(tmp_path),
        )
        == 0
    )
    run_dir = next(tmp_path.glob("solve-renewal-*"))
    cfg = parse_config(config_path=str(run_dir / "resolved.cfg"))
    assert cfg.subcommand == "solve-renewal"
    assert cfg.T == 500.0 and cfg.dt == 0.25 and cfg.stride == 10
