"""Command-line front end: plain key=value configs, eight subcommands, and
deterministic run directories.

Every run resolves its configuration (file < ``--set`` overrides < dedicated
flags), validates each value against the named constraint of the module it
feeds, writes the fully resolved config next to the outputs, and exits

    0  all gated metrics passed (solver runs gate nothing),
    1  a metric failed (summary as one JSON line on stderr),
    2  usage error (unknown key, constraint violation, bad flags),
    3  internal error.

``SUBDIFF_THREADS`` caps worker threads in the particle simulator (0 = auto).
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctrw import msd_estimate, simulate
from .fracpde import diffusion_coefficient, second_moment_series, solve_mild
from .harness import (
    _delta_profile,
    _write_csv,
    config_digest,
    convergence_experiment,
    msd_experiment,
    renewal_experiment,
    write_report,
)
from .model import (
    JumpKernel,
    SurvivalModel,
    fresh_initial_condition,
    validate_assumptions,
)
from .renewal import FreshSource, solve_renewal
from .spatial import SpaceLattice, solve_agepde

__all__ = ["ConfigError", "RunConfig", "parse_config", "dispatch", "main"]

SUBCOMMANDS = (
    "solve-renewal",
    "solve-agepde",
    "simulate-ctrw",
    "solve-fracpde",
    "experiment-convergence",
    "experiment-msd",
    "experiment-renewal",
    "validate",
)


class ConfigError(Exception):
    """A configuration problem the user can fix (exit status 2)."""


def _float(key: str, raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} expects a number, got {raw!r}") from None


def _int(key: str, raw):
    try:
        return int(str(raw))
    except (TypeError, ValueError):
        raise ConfigError(f"{key} expects an integer, got {raw!r}") from None


def _floats(key: str, raw):
    if isinstance(raw, (list, tuple)):
        return [float(v) for v in raw]
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key} expects a comma-separated list of numbers")
    return [_float(key, p) for p in parts]


def _str(key: str, raw):
    return str(raw)


# key -> (converter, default); None defaults mean "filled per subcommand"
_SCHEMA = {
    "subcommand": (_str, None),
    "alpha": (_float, 0.5),
    "K": (_float, 1.0),
    "delta": (_float, None),
    "beta_table": (_str, None),
    "psi": (_float, None),
    "kernel": (_str, None),
    "sigma2": (_float, 1.0),
    "d": (_int, 1),
    "L": (_float, None),
    "h": (_float, None),
    "dt": (_float, None),
    "T": (_float, None),
    "a_max": (_float, None),
    "eps": (_float, 1.0),
    "eps_list": (_floats, [0.2, 0.1, 0.05, 0.025]),
    "alphas": (_floats, [0.5, 0.3, 0.7]),
    "n_particles": (_int, 100_000),
    "seed": (_int, 11),
    "out": (_str, "runs"),
    "mu": (_float, 1.0),
    "stride": (_int, 10),
    "width": (_float, 1.5),
    "variant": (_str, "well-prepared"),
    "t_floor": (_float, 0.1),
    "rate_tol": (_float, 0.3),
}

# per-subcommand grid defaults (coarse boxes for the long-horizon solvers,
# the fine short-horizon box for the scaling-limit experiment)
_GRID_DEFAULTS = {
    "solve-renewal": {"T": 1e4, "dt": 0.125},
    "experiment-renewal": {"T": 1e4, "dt": 0.125},
    "solve-agepde": {"T": 1e4, "dt": 0.5, "L": 256.0, "h": 1.0},
    "solve-fracpde": {"T": 1e4, "dt": 0.5, "L": 256.0, "h": 1.0},
    "simulate-ctrw": {"T": 1e4},
    "experiment-convergence": {"T": 1.0, "dt": 1.0 / 512, "L": 25.6, "h": 0.05},
    "experiment-msd": {},
    "validate": {},
}

# the keys each subcommand actually consumes (what resolved.cfg records)
_MODEL_KEYS = ("alpha", "K", "delta", "beta_table", "psi")
_KERNEL_KEYS = ("kernel", "sigma2", "d")
_RELEVANT = {
    "validate": _MODEL_KEYS + _KERNEL_KEYS,
    "solve-renewal": _MODEL_KEYS + ("T", "dt", "a_max", "stride"),
    "experiment-renewal": _MODEL_KEYS + ("T", "dt", "mu", "stride"),
    "solve-agepde": _MODEL_KEYS + _KERNEL_KEYS + ("L", "h", "dt", "T", "eps"),
    "solve-fracpde": _MODEL_KEYS + _KERNEL_KEYS + ("L", "h", "dt", "T"),
    "simulate-ctrw": _MODEL_KEYS + _KERNEL_KEYS + ("T", "n_particles", "seed"),
    "experiment-convergence": _MODEL_KEYS
    + _KERNEL_KEYS
    + ("L", "h", "dt", "T", "eps_list", "width", "variant", "t_floor", "rate_tol"),
    "experiment-msd": _KERNEL_KEYS + ("alphas", "K", "n_particles", "seed"),
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run parameters; ``values`` holds every schema key."""

    subcommand: str
    values: dict

    def __getattr__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def relevant(self) -> dict:
        keys = ("subcommand", "out") + _RELEVANT[self.subcommand]
        out = {k: (self.subcommand if k == "subcommand" else self.values[k]) for k in keys}
        return {k: v for k, v in out.items() if v is not None}


def _read_config_file(path: str) -> dict:
    """Plain key=value sections; a flat file without headers is accepted."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (K vs k)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    items = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key in items:
                raise ConfigError(f"duplicate key across sections: {key}")
            items[key] = value
    return items


def _validate(values: dict) -> None:
    """Check every value against the named constraint of the module it feeds."""
    alpha = values["alpha"]
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0,1)")
    if values["delta"] is not None and not 0.0 < values["delta"] < 1.0 - alpha:
        raise ConfigError("delta must lie in (0, 1-alpha)")
    for a in values["alphas"]:
        if not 0.0 < a < 1.0:
            raise ConfigError("alphas must lie in (0,1)")
    if values["K"] <= 0.0:
        raise ConfigError("K must be positive")
    if values["psi"] is not None and values["psi"] <= 0.0:
        raise ConfigError("psi must be positive")
    if values["kernel"] not in ("lattice_nn", "gaussian"):
        raise ConfigError("kernel must be 'lattice_nn' or 'gaussian'")
    if values["sigma2"] <= 0.0:
        raise ConfigError("sigma2 must be positive")
    if values["d"] not in (1, 2):
        raise ConfigError("d must be 1 or 2")
    for key in ("L", "h", "dt", "T", "a_max", "width", "rate_tol"):
        if values[key] is not None and values[key] <= 0.0:
            raise ConfigError(f"{key} must be positive")
    if values["t_floor"] < 0.0:
        raise ConfigError("t_floor must be nonnegative")
    if not 0.0 < values["eps"] <= 1.0:
        raise ConfigError("eps must lie in (0, 1]")
    eps_list = values["eps_list"]
    if len(eps_list) < 4:
        raise ConfigError("eps_list needs at least 4 values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or eps_list[-1] <= 0.0:
        raise ConfigError("eps_list must be positive and strictly decreasing")
    if values["n_particles"] < 2:
        raise ConfigError("n_particles must be at least 2")
    if values["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if values["stride"] < 1:
        raise ConfigError("stride must be a positive integer")
    if not values["mu"] > 1.0 - alpha:
        raise ConfigError("mu must exceed 1 - alpha")
    if values["variant"] not in ("well-prepared", "self-similar"):
        raise ConfigError("variant must be 'well-prepared' or 'self-similar'")
    L, h = values["L"], values["h"]
    if L is not None and h is not None:
        n = L / h
        if abs(n - round(n)) > 1e-9 or round(n) < 2 or round(n) & (round(n) - 1):
            raise ConfigError("L/h must be a power of two (lattice nodes per axis)")


def parse_config(
    subcommand: str | None = None,
    *,
    config_path: str | None = None,
    overrides=(),
    seed: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Merge defaults, config file, and flags into a validated RunConfig.

    Precedence: schema defaults < config file < ``--set key=value``
    overrides < dedicated flags (subcommand, ``--seed``, ``--out``).
    Unknown keys are errors, not warnings.
    """
    raw: dict = {}
    if config_path is not None:
        raw.update(_read_config_file(config_path))
    for item in overrides:
        key, sep, value = str(item).partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        raw[key.strip()] = value.strip()

    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    values = {}
    for key, (convert, default) in _SCHEMA.items():
        values[key] = convert(key, raw[key]) if key in raw else default
    if subcommand is not None:
        values["subcommand"] = subcommand
    if seed is not None:
        values["seed"] = int(seed)
    if out is not None:
        values["out"] = str(out)

    sub = values.pop("subcommand")
    if sub is None:
        raise ConfigError("subcommand is required")
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand: {sub}")
    for key, default in _GRID_DEFAULTS[sub].items():
        if values[key] is None:
            values[key] = default
    if values["kernel"] is None:
        # the scaling-limit experiment shrinks eps below any lattice spacing,
        # which only a continuous displacement law supports
        values["kernel"] = "gaussian" if sub == "experiment-convergence" else "lattice_nn"
    _validate(values)
    if sub == "experiment-msd":
        for a in values["alphas"]:
            if a not in (0.5, 0.3, 0.7):
                raise ConfigError(
                    "experiment-msd has calibrated cells for alphas in {0.5, 0.3, 0.7} only"
                )
    if sub == "experiment-renewal" and values["T"] < 1e2:
        raise ConfigError("T must be at least 100 for the tail fits")
    if sub == "experiment-convergence" and values["kernel"] in ("lattice_nn", "discrete_pmf"):
        for eps in values["eps_list"]:
            ratio = eps / values["h"]
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(
                    "discrete kernels need every eps to be a positive multiple of h"
                )
    if (
        sub == "experiment-convergence"
        and values["variant"] == "self-similar"
        and min(values["eps_list"]) * values["width"] < 3.0 * values["h"]
    ):
        raise ConfigError("self-similar release is unresolvable: eps*width must be >= 3h")
    return RunConfig(subcommand=sub, values=values)


def _build_model(config: RunConfig) -> SurvivalModel:
    v = config.values
    try:
        if v["beta_table"] is not None:
            table = np.loadtxt(v["beta_table"], delimiter=",", ndmin=2)
            if table.shape[1] != 2:
                raise ConfigError("beta_table must have two columns: age, hazard")
            return SurvivalModel.tabulated(
                v["alpha"], table[:, 0], table[:, 1], delta=v["delta"], Psi=v["psi"]
            )
        return SurvivalModel.prototype(v["alpha"], v["K"], delta=v["delta"])
    except OSError as exc:
        raise ConfigError(f"cannot read beta_table: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _build_kernel(config: RunConfig) -> JumpKernel:
    v = config.values
    if v["kernel"] == "lattice_nn":
        if abs(v["sigma2"] - 1.0) > 1e-12:
            raise ConfigError("lattice_nn has sigma2 = 1; drop the sigma2 key or use gaussian")
        return JumpKernel.lattice_nn(dimension=v["d"])
    return JumpKernel.gaussian(sigma_axis=(v["sigma2"] / v["d"]) ** 0.5, dimension=v["d"])


def _build_lattice(config: RunConfig) -> SpaceLattice:
    try:
        return SpaceLattice(config.d, config.L, config.h)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_resolved(config: RunConfig, run_dir: Path) -> None:
    lines = ["[run]"]
    for key, value in sorted(config.relevant().items()):
        if isinstance(value, list):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    (run_dir / "resolved.cfg").write_text("\n".join(lines) + "\n")


def _run_dir(config: RunConfig) -> Path:
    digest = config_digest(config.relevant())
    run_dir = Path(config.out) / f"{config.subcommand}-{digest[:16]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _fail(kind: str, **payload) -> None:
    print(json.dumps({"error": kind, **payload}, sort_keys=True), file=sys.stderr)


def _finish_experiment(report, config: RunConfig) -> int:
    run_dir = _run_dir(config)
    paths = write_report(report, run_dir.parent, dir_name=run_dir.name)
    _write_resolved(config, run_dir)
    failed = [m for m in report.metrics if not m.passed]
    if failed:
        _fail(
            "metrics_failed",
            experiment=report.experiment,
            failed=[{"name": m.name, "value": m.value, "tol": m.tolerance} for m in failed],
        )
        return 1
    return 0


def dispatch(config: RunConfig) -> int:
    """Run the subcommand; returns the exit status (0 pass / 1 metric fail)."""
    sub = config.subcommand

    if sub == "validate":
        model = _build_model(config)
        kernel = _build_kernel(config)
        report = validate_assumptions(model, kernel)
        run_dir = _run_dir(config)
        _write_resolved(config, run_dir)
        payload = {
            "passed": bool(report.passed),
            "checks": {k: bool(v) for k, v in sorted(report.checks.items())},
            "diagnostics": {k: float(v) for k, v in sorted(report.diagnostics.items())},
        }
        (run_dir / "validation.json").write_text(json.dumps(payload, indent=2) + "\n")
        if not report.passed:
            _fail("validation_failed", failed=[k for k, ok in report.checks.items() if not ok])
            return 1
        return 0

    if sub == "solve-renewal":
        model = _build_model(config)
        sol = solve_renewal(model, FreshSource(1.0), config.T, config.dt, a_support=config.a_max)
        run_dir = _run_dir(config)
        _write_resolved(config, run_dir)
        s = config.stride
        _write_csv(
            run_dir / "boundary.csv",
            {
                "t": sol.boundary.times[::s],
                "N": sol.boundary.values[::s],
                "mass": sol.mass_series[::s],
            },
        )
        return 0

    if sub == "experiment-renewal":
        model = _build_model(config)
        report = renewal_experiment(
            model, T=config.T, dt=config.dt, mu=config.mu, stride=config.stride
        )
        return _finish_experiment(report, config)

    if sub == "experiment-msd":
        kernel = _build_kernel(config)
        report = msd_experiment(
            kernel,
            alphas=tuple(config.alphas),
            K=config.K,
            n_particles=config.n_particles,
            seed=config.seed,
        )
        return _finish_experiment(report, config)

    if sub == "experiment-convergence":
        model = _build_model(config)
        kernel = _build_kernel(config)
        report = convergence_experiment(
            model,
            kernel,
            eps_list=tuple(config.eps_list),
            T=config.T,
            dt=config.dt,
            length=config.L,
            spacing=config.h,
            width=config.width,
            variant=config.variant,
            t_floor=config.t_floor,
            rate_tolerance=config.rate_tol,
        )
        return _finish_experiment(report, config)

    model = _build_model(config)
    kernel = _build_kernel(config)

    if sub == "simulate-ctrw":
        snaps = simulate(model, kernel, config.n_particles, config.T, config.seed)
        est = msd_estimate(snaps)
        run_dir = _run_dir(config)
        _write_resolved(config, run_dir)
        _write_csv(
            run_dir / "msd.csv",
            {"t": est.times, "msd": est.values, "stderr": est.stderr},
        )
        return 0

    lattice = _build_lattice(config)
    release = _delta_profile(lattice)

    if sub == "solve-agepde":
        if kernel.variant in ("lattice_nn", "discrete_pmf"):
            ratio = config.eps / lattice.spacing
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError("discrete kernels need eps to be a positive multiple of h")
        r0 = fresh_initial_condition(model, spatial_profile=release)
        traj = solve_agepde(model, kernel, r0, config.eps, config.T, config.dt, lattice)
        run_dir = _run_dir(config)
        _write_resolved(config, run_dir)
        _write_csv(
            run_dir / "moments.csv",
            {
                "t": traj.times,
                "mass": traj.mass_series,
                "second_moment": np.array([m.second_moment() for m in traj.measures]),
            },
        )
        if lattice.dimension == 1:
            final = traj.measures[-1]
            _write_csv(
                run_dir / "final_profile.csv",
                {"x": lattice.coordinates, "density": final.values},
            )
        return 0

    if sub == "solve-fracpde":
        coefficient = diffusion_coefficient(model, kernel)
        traj = solve_mild(model.alpha, coefficient, release, config.T, config.dt)
        run_dir = _run_dir(config)
        _write_resolved(config, run_dir)
        _write_csv(
            run_dir / "moments.csv",
            {
                "t": traj.times,
                "mass": traj.mass_series,
                "second_moment": second_moment_series(traj),
            },
        )
        if lattice.dimension == 1:
            final = traj.measures[-1]
            _write_csv(
                run_dir / "final_profile.csv",
                {"x": lattice.coordinates, "density": final.values},
            )
        return 0

    raise AssertionError(f"unhandled subcommand: {sub}")


def _argparser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subdiff",
        description="Age-structured jump models, heavy-tailed walkers, and their "
        "fractional-diffusion limit: solvers and cross-validation experiments.",
        epilog="Config precedence: file < --set < flags. "
        "SUBDIFF_THREADS caps worker threads (0 = auto).",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", metavar="PATH", help="key=value config file")
    parser.add_argument("--seed", type=int, metavar="N", help="override the RNG seed")
    parser.add_argument("--out", metavar="DIR", help="output root (default: runs)")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        dest="sets",
        help="override one config key (repeatable)",
    )
    return parser


def main(argv=None) -> int:
    args = _argparser().parse_args(argv)
    try:
        config = parse_config(
            args.subcommand,
            config_path=args.config,
            overrides=args.sets or (),
            seed=args.seed,
            out=args.out,
        )
        return dispatch(config)
    except ConfigError as exc:
        _fail("usage", detail=str(exc))
        return 2
    except Exception as exc:  # the process boundary: anything else is internal
        _fail("internal", detail=f"{type(exc).__name__}: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
