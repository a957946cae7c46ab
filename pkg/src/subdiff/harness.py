"""Experiment orchestration: run the independent routes against each other,
score the outcomes against the closed-form laws, and write deterministic
report bundles (JSON summary, CSV series, figures).

Every experiment is a pure function of its configuration: the config is
hashed into a digest, the digest names the run directory, and re-running
with the same config reproduces every output file byte for byte.  Metric
records with ``tolerance == 0.0`` are reported for inspection but never
gated (their ``passed`` flag is fixed true).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctrw import _n_workers, fit_power_law, msd_estimate, simulate
from .fracpde import (
    diffusion_coefficient,
    mode_oracle,
    second_moment_series,
    solve_mild,
)
from .model import JumpKernel, SurvivalModel, fresh_initial_condition
from .renewal import (
    FreshSource,
    boundary_volterra,
    check_psi_convolution,
    convol_asymptotics,
)
from .special import UniformTimeGrid
from .spatial import (
    GridMeasure,
    SpaceLattice,
    _rfft,
    bump_family,
    solve_agepde,
    weak_form_residual,
)

__all__ = [
    "MetricRecord",
    "ExperimentReport",
    "config_digest",
    "weak_test_family",
    "convergence_experiment",
    "msd_experiment",
    "renewal_experiment",
    "write_report",
    "read_report",
]


@dataclass(frozen=True)
class MetricRecord:
    """One scored quantity: the measured value, its band, and the claim
    it checks (a stable slug stored in the report)."""

    name: str
    value: float
    tolerance: float
    passed: bool
    claim: str


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    config: dict
    config_digest: str
    metrics: list[MetricRecord]
    series: dict = field(repr=False)  # table name -> {column -> 1-d array}

    @property
    def all_pass(self) -> bool:
        return all(m.passed for m in self.metrics)


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode()).hexdigest()


def _report(experiment: str, config: dict, metrics, series) -> ExperimentReport:
    return ExperimentReport(
        experiment=experiment,
        config=config,
        config_digest=config_digest(config),
        metrics=list(metrics),
        series=dict(series),
    )


def _kernel_config(kernel: JumpKernel) -> dict:
    return {
        "kernel": kernel.variant,
        "dimension": kernel.dimension,
        "sigma2": float(kernel.sigma2),
    }


def _model_config(model: SurvivalModel) -> dict:
    out = {
        "family": model.family,
        "alpha": float(model.alpha),
        "Psi": float(model.Psi),
        "delta": float(model.delta),
    }
    if model.K is not None:
        out["K"] = float(model.K)
    return out


def msd_prefactor(model: SurvivalModel, kernel: JumpKernel) -> float:
    """The constant of the mean-square displacement law
    sin(pi a)/(pi a) * sigma2 / Psi (per unit mass)."""
    a = model.alpha
    return math.sin(math.pi * a) / (math.pi * a) * kernel.sigma2 / model.Psi


# --- test function family -------------------------------------------------------


def weak_test_family(lattice: SpaceLattice) -> list[tuple[str, np.ndarray]]:
    """Six C^2 test functions vanishing at the wrap seam: three bumps of
    different widths and centres, a tapered coordinate, a tapered square
    (radial), and a tapered cosine."""
    family = list(bump_family(lattice))  # wide, narrow, tapered square
    L = lattice.length
    x = lattice.coordinates - 0.5 * L
    if lattice.dimension == 1:
        r = np.abs(x)
        r_off = np.abs(x - 0.125 * L)
        coord = x
    else:
        r = np.sqrt(x[:, None] ** 2 + x[None, :] ** 2)
        r_off = np.sqrt((x - 0.125 * L)[:, None] ** 2 + x[None, :] ** 2)
        coord = np.broadcast_to(x[:, None], lattice.shape())

    def bump(rr: np.ndarray, radius: float) -> np.ndarray:
        out = np.cos(0.5 * math.pi * np.clip(rr / radius, 0.0, 1.0)) ** 4
        return np.where(rr < radius, out, 0.0)

    wide = bump(r, 0.4 * L)
    family.append(("bump_offset", bump(r_off, 0.25 * L)))
    family.append(("tapered_coordinate", (coord / L) * wide))
    family.append(("tapered_cosine", np.cos(8.0 * math.pi * coord / L) * wide))
    return family


def _pairings(measures, phi: np.ndarray, weight: float) -> np.ndarray:
    return np.array([weight * float(np.sum(m.values * phi)) for m in measures])


# --- convergence of the rescaled density ----------------------------------------


def _reference_solution(alpha, coefficient, u0, T, dt):
    """Fractional heat reference, refused unless it passes its own oracle."""
    traj = solve_mild(alpha, coefficient, u0, T, dt, store_times="all")
    got = _rfft(u0.lattice, traj.measures[-1].values)
    want = mode_oracle(alpha, coefficient, u0.lattice, u0, T)
    deviation = float(np.max(np.abs(got - want)) / np.max(np.abs(want)))
    if deviation > 1e-3:
        raise RuntimeError(
            f"reference solver failed its own mode oracle: relative deviation "
            f"{deviation:.3e} at t={T} exceeds 1e-3; refuse to use it as ground truth"
        )
    return traj, deviation


def _gaussian_profile(lattice: SpaceLattice, width: float) -> GridMeasure:
    x = np.mod(lattice.coordinates + 0.5 * lattice.length, lattice.length) - 0.5 * lattice.length
    vals = np.exp(-0.5 * (x / width) ** 2)
    return GridMeasure(lattice, vals / (vals.sum() * lattice.spacing))


def _delta_profile(lattice: SpaceLattice) -> GridMeasure:
    vals = np.zeros(lattice.shape())
    vals[(0,) * lattice.dimension] = lattice.spacing**-lattice.dimension
    return GridMeasure(lattice, vals)


def convergence_experiment(
    model: SurvivalModel,
    kernel: JumpKernel,
    *,
    eps_list=(0.2, 0.1, 0.05, 0.025),
    T: float = 1.0,
    dt: float = 1.0 / 512,
    length: float = 25.6,
    spacing: float = 0.05,
    width: float = 1.5,
    variant: str = "well-prepared",
    t_floor: float = 0.1,
    rate_t_min: float = 0.25,
    rate_tolerance: float = 0.3,
    n_threads: int | None = None,
) -> ExperimentReport:
    """Convergence of the rescaled age-structured density to its fractional
    limit, measured two ways on a shrinking eps sequence.

    E(eps) is the worst pairing gap against the oracle-validated fractional
    reference over the six-function test family and all stored times past
    ``t_floor`` (the first few steps of both schemes carry an O(dt^alpha)
    startup layer that is independent of eps and would mask the trend).
    The weak-form residual of the eps-solution itself is fitted for the
    expected log-log rate min(2, 2 delta / alpha).

    ``variant``: "well-prepared" releases the same width-``width`` Gaussian
    at every eps; "self-similar" shrinks the release to width ``eps*width``
    (the limit starts from a point mass), which requires eps*width to stay
    resolvable (>= 3 lattice spacings).
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 4:
        raise ValueError("eps_list needs at least 4 values")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if variant not in ("well-prepared", "self-similar"):
        raise ValueError("variant must be 'well-prepared' or 'self-similar'")
    lattice = SpaceLattice(kernel.dimension, length, spacing)
    if variant == "self-similar" and min(eps_list) * width < 3.0 * spacing:
        raise ValueError(
            "self-similar release is unresolvable: eps*width must be >= 3 spacings"
        )

    coefficient = diffusion_coefficient(model, kernel)
    limit_start = _gaussian_profile(lattice, width) if variant == "well-prepared" else _delta_profile(lattice)
    reference, oracle_dev = _reference_solution(model.alpha, coefficient, limit_start, T, dt)

    family = weak_test_family(lattice)
    weight = lattice.spacing**lattice.dimension
    ref_pairings = {name: _pairings(reference.measures, phi, weight) for name, phi in family}

    def run_cell(eps: float):
        w0 = width if variant == "well-prepared" else eps * width
        r0 = fresh_initial_condition(model, spatial_profile=_gaussian_profile(lattice, w0))
        traj = solve_agepde(model, kernel, r0, eps, T, dt, lattice, store_times="all")
        mask = traj.times >= t_floor
        gap = 0.0
        per_phi = {}
        for name, phi in family:
            diff = np.abs(_pairings(traj.measures, phi, weight) - ref_pairings[name])
            per_phi[name] = float(np.max(diff[mask]))
            gap = max(gap, per_phi[name])
        residual = weak_form_residual(traj, family[0][1], model, kernel, coefficient, t_min=rate_t_min)
        return gap, per_phi, residual.sup

    workers = _n_workers(n_threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(run_cell, eps_list))
    else:
        cells = [run_cell(eps) for eps in eps_list]
    E = np.array([c[0] for c in cells])
    sups = np.array([c[2] for c in cells])

    log_eps = np.log(eps_list)
    e_rate = float(np.polyfit(log_eps, np.log(E), 1)[0])
    sup_rate = float(np.polyfit(log_eps, np.log(sups), 1)[0])
    # the residual-rate law min(2, 2 delta/alpha) is derived for a fixed
    # (well-prepared) release; under the shrinking release the residual
    # picks up an extra eps power, so the band is only gated there
    expected_rate = min(2.0, 2.0 * model.delta / model.alpha)
    gate_rate = variant == "well-prepared"
    decreasing = bool(np.all(np.diff(E) < 0.0))
    worst_ratio = float(np.max(E[1:] / E[:-1]))

    config = {
        "experiment": "convergence",
        **_model_config(model),
        **_kernel_config(kernel),
        "eps_list": eps_list,
        "T": T,
        "dt": dt,
        "length": length,
        "spacing": spacing,
        "width": width,
        "variant": variant,
        "t_floor": t_floor,
        "rate_t_min": rate_t_min,
        "rate_tolerance": rate_tolerance,
    }
    metrics = [
        MetricRecord(
            name="E(eps) strictly decreasing (worst consecutive ratio)",
            value=worst_ratio,
            tolerance=1.0,
            passed=decreasing,
            claim="weak-convergence-of-rescaled-density",
        ),
        MetricRecord(
            name="E(eps) fitted log-log rate",
            value=e_rate,
            tolerance=0.0,
            passed=True,
            claim="weak-convergence-of-rescaled-density",
        ),
        MetricRecord(
            name="weak-form residual log-log rate",
            value=sup_rate,
            tolerance=rate_tolerance if gate_rate else 0.0,
            passed=abs(sup_rate - expected_rate) <= rate_tolerance if gate_rate else True,
            claim="weak-form-residual-rate",
        ),
        MetricRecord(
            name="reference mode-oracle deviation",
            value=oracle_dev,
            tolerance=1e-3,
            passed=oracle_dev <= 1e-3,
            claim="mode-relaxation-oracle",
        ),
    ]
    series = {
        "E_of_eps": {
            "eps": np.array(eps_list),
            "E": E,
            "weak_form_sup": sups,
        },
        "E_by_phi": {
            "eps": np.array(eps_list),
            **{name: np.array([c[1][name] for c in cells]) for name, _ in family},
        },
    }
    return _report("convergence", config, metrics, series)


# --- mean-square displacement, three routes --------------------------------------


# per-alpha cell defaults: horizon, step, box, fit window, sample count.  The
# horizons compensate the finite-time bias of the t^alpha law (slow constants
# at small alpha, early-time transients at large alpha); boxes keep the wrap
# seam 20 standard deviations out at the horizon.
_MSD_CELLS = {
    0.5: {"T": 1e4, "dt": 0.5, "length": 256.0, "window": (1e2, 1e4), "n_times": 25},
    0.3: {"T": 1e6, "dt": 50.0, "length": 256.0, "window": (5e4, 1e6), "n_times": 40},
    0.7: {"T": 1e4, "dt": 0.5, "length": 512.0, "window": (5e2, 1e4), "n_times": 40},
}

# cross-route comparison windows for the canonical alpha = 1/2 cell: the
# stochastic pairs are scored in MC standard errors, the deterministic pair
# relatively.  The late-window floor for the fractional pair keeps the known
# O(1) offset between aged and unaged starts below the noise scale.
_AGREE_WINDOWS = {
    "ctrw_vs_agepde": (1e2, 4.0),
    "ctrw_vs_fracpde": (5e3, 4.0),
    "agepde_vs_fracpde": (1e3, 0.05),
}


def _msd_cell(alpha: float, kernel: JumpKernel, K: float, n_particles: int, seed: int, cell: dict, n_threads):
    model = SurvivalModel.prototype(alpha=alpha, K=K)
    coefficient = diffusion_coefficient(model, kernel)
    T, dt, length = cell["T"], cell["dt"], cell["length"]
    lattice = SpaceLattice(kernel.dimension, length, 1.0)
    times = np.unique(np.round(np.geomspace(1e2, T, cell["n_times"]) / dt) * dt)
    release = _delta_profile(lattice)

    r0 = fresh_initial_condition(model, spatial_profile=release)
    spatial_traj = solve_agepde(model, kernel, r0, 1.0, T, dt, lattice, store_times=times)
    m2_spatial = np.array([m.second_moment() for m in spatial_traj.measures])

    frac_traj = solve_mild(alpha, coefficient, release, T, dt, store_times=times)
    m2_frac = second_moment_series(frac_traj)

    snaps = simulate(model, kernel, n_particles, T, seed, snapshot_times=times, n_threads=n_threads)
    estimate = msd_estimate(snaps)

    law = msd_prefactor(model, kernel) * times**alpha
    return model, times, m2_spatial, m2_frac, estimate, law, cell["window"]


def msd_experiment(
    kernel: JumpKernel,
    *,
    alphas=(0.5, 0.3, 0.7),
    K: float = 1.0,
    n_particles: int = 100_000,
    seed: int = 11,
    n_threads: int | None = None,
    cells: dict | None = None,
) -> ExperimentReport:
    """Mean-square displacement along three independent routes.

    For each alpha: the age-structured lattice solver at eps = 1, the
    particle ensemble, and the fractional heat solver, all released from a
    point mass, fitted on the per-alpha window.  The canonical alpha = 1/2
    cell additionally scores the amplitude against sin(pi a)/(pi a) and the
    pairwise curve agreement.  Raises when the ensemble is too small for
    the agreement bands to mean anything.
    """
    alphas = [float(a) for a in alphas]
    cells = dict(_MSD_CELLS if cells is None else cells)
    for a in alphas:
        if a not in cells:
            raise ValueError(f"no cell configuration for alpha={a}")
    if n_particles < 2:
        raise ValueError("n_particles must be at least 2")

    # cells run in sequence: the dominant cost is the particle ensemble,
    # which already spreads its chunks over the worker threads
    results = [_msd_cell(a, kernel, K, n_particles, seed, cells[a], n_threads) for a in alphas]

    metrics = []
    series = {}
    for a, (model, times, m2_sp, m2_fr, est, law, window) in zip(alphas, results):
        fit_sp = fit_power_law(times, m2_sp, *window)
        fit_fr = fit_power_law(times, m2_fr, *window)
        fit_mc = fit_power_law(times, est.values, *window)
        prefactor = msd_prefactor(model, kernel)
        canonical = abs(a - 0.5) < 1e-12
        for route, fit, tol in (
            ("agepde", fit_sp, 0.05),
            ("ctrw", fit_mc, 0.05),
            ("fracpde", fit_fr, 0.01),
        ):
            metrics.append(
                MetricRecord(
                    name=f"msd exponent {route} alpha={a:g}",
                    value=fit.exponent,
                    tolerance=tol,
                    passed=abs(fit.exponent - a) <= tol,
                    claim="msd-power-law",
                )
            )
            amp_tol = 0.10 if canonical else 0.0
            ratio = fit.amplitude / prefactor
            metrics.append(
                MetricRecord(
                    name=f"msd amplitude ratio {route} alpha={a:g}",
                    value=ratio,
                    tolerance=amp_tol,
                    passed=abs(ratio - 1.0) <= amp_tol if canonical else True,
                    claim="msd-power-law",
                )
            )
        if canonical:
            windows = {}
            for pair, (floor, band) in _AGREE_WINDOWS.items():
                w = times >= floor
                if not np.any(w):
                    raise ValueError(
                        f"agreement window for {pair} is empty: the cell horizon "
                        f"must reach past t={floor:g}"
                    )
                windows[pair] = (w, band)
            w, _ = windows["ctrw_vs_fracpde"]
            if 4.0 * float(np.max(est.stderr[w] / law[w])) > 0.10:
                raise ValueError(
                    "Monte Carlo standard errors exceed the agreement tolerance; "
                    "increase n_particles"
                )
            w, band = windows["ctrw_vs_agepde"]
            z_sp = float(np.max(np.abs(est.values[w] - m2_sp[w]) / est.stderr[w]))
            metrics.append(
                MetricRecord(
                    name="ctrw vs agepde max deviation (MC standard errors)",
                    value=z_sp,
                    tolerance=band,
                    passed=z_sp <= band,
                    claim="three-route-agreement",
                )
            )
            w, band = windows["ctrw_vs_fracpde"]
            z_fr = float(np.max(np.abs(est.values[w] - m2_fr[w]) / est.stderr[w]))
            metrics.append(
                MetricRecord(
                    name="ctrw vs fracpde max deviation (MC standard errors)",
                    value=z_fr,
                    tolerance=band,
                    passed=z_fr <= band,
                    claim="three-route-agreement",
                )
            )
            w, band = windows["agepde_vs_fracpde"]
            rel = float(np.max(np.abs(m2_sp[w] / m2_fr[w] - 1.0)))
            metrics.append(
                MetricRecord(
                    name="agepde vs fracpde max relative gap",
                    value=rel,
                    tolerance=band,
                    passed=rel <= band,
                    claim="three-route-agreement",
                )
            )
        series[f"msd_alpha_{a:g}"] = {
            "t": times,
            "agepde": m2_sp,
            "fracpde": m2_fr,
            "ctrw": est.values,
            "ctrw_stderr": est.stderr,
            "law": law,
        }

    config = {
        "experiment": "msd",
        **_kernel_config(kernel),
        "alphas": alphas,
        "K": K,
        "n_particles": n_particles,
        "seed": seed,
        "cells": {
            f"{a:g}": {
                "T": cells[a]["T"],
                "dt": cells[a]["dt"],
                "length": cells[a]["length"],
                "window": list(cells[a]["window"]),
                "n_times": cells[a]["n_times"],
            }
            for a in alphas
        },
    }
    return _report("msd", config, metrics, series)


# --- renewal tail laws ------------------------------------------------------------


def renewal_experiment(
    model: SurvivalModel,
    n0=None,
    *,
    T: float = 1e4,
    dt: float = 0.125,
    mu: float = 1.0,
    total0: float | None = None,
    stride: int = 10,
) -> ExperimentReport:
    """Tail laws of the boundary flux: mass recovery through the survival
    convolution and the Y_mu convolution ratio approaching its constant.

    ``n0`` defaults to all mass at age zero.  ``total0`` is inferred for a
    fresh source and must be given for array or callable data.  Stored
    series are strided to every ``stride``-th step.
    """
    if n0 is None:
        n0 = FreshSource(1.0)
    if total0 is None:
        if isinstance(n0, FreshSource):
            total0 = n0.mass
        else:
            raise ValueError("total0 must be given for non-fresh initial data")
    if T < 1e2:
        raise ValueError("horizon too short for the tail fits: need T >= 100")

    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError("T must be a positive integer number of steps")
    N = boundary_volterra(model, n0, UniformTimeGrid(dt, n_steps))
    recovery = check_psi_convolution(N, model, total0)
    asym = convol_asymptotics(N, mu, model, total0)

    ratio_end = float(asym.ratios[-1])
    ratio_dev = abs(ratio_end / asym.limit - 1.0)
    config = {
        "experiment": "renewal",
        **_model_config(model),
        "T": T,
        "dt": dt,
        "mu": mu,
        "total0": total0,
        "stride": stride,
        "source": "fresh" if isinstance(n0, FreshSource) else "tabulated",
    }
    metrics = [
        MetricRecord(
            name="mass-recovery residual decay exponent",
            value=recovery.fitted_exponent,
            tolerance=0.1,
            passed=abs(recovery.fitted_exponent + model.alpha) <= 0.1,
            claim="boundary-flux-mass-recovery",
        ),
        MetricRecord(
            name="convolution ratio relative deviation at horizon",
            value=ratio_dev,
            tolerance=0.05,
            passed=ratio_dev <= 0.05,
            claim="convolution-ratio-limit",
        ),
        MetricRecord(
            name="mass-recovery envelope constant",
            value=recovery.fitted_constant,
            tolerance=0.0,
            passed=True,
            claim="boundary-flux-mass-recovery",
        ),
        MetricRecord(
            name="convolution ratio approach rate",
            value=asym.fitted_rate,
            tolerance=0.0,
            passed=True,
            claim="convolution-ratio-limit",
        ),
    ]
    series = {
        "mass_recovery": {
            "t": recovery.times[::stride],
            "residual": recovery.residuals[::stride],
        },
        "convolution_ratio": {
            "t": asym.times[::stride],
            "ratio": asym.ratios[::stride],
        },
    }
    return _report("renewal", config, metrics, series)


# --- report I/O --------------------------------------------------------------------


def _write_csv(path: Path, table: dict) -> None:
    columns = list(table.keys())
    arrays = [np.asarray(table[c], dtype=float) for c in columns]
    n = arrays[0].shape[0]
    if any(a.shape != (n,) for a in arrays):
        raise ValueError(f"series table for {path.name} has ragged columns")
    lines = [",".join(columns)]
    for i in range(n):
        lines.append(",".join(f"{a[i]:.17g}" for a in arrays))
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path: Path) -> dict:
    lines = path.read_text().splitlines()
    columns = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(columns)))
    return {c: data[:, j].copy() for j, c in enumerate(columns)}


def _render_figures(report: ExperimentReport, run_dir: Path) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []

    def save(fig, name: str) -> None:
        out = run_dir / name
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(name)

    if report.experiment == "convergence" and "E_of_eps" in report.series:
        table = report.series["E_of_eps"]
        fig, ax = plt.subplots(figsize=(5.4, 3.8), layout="constrained")
        ax.loglog(table["eps"], table["E"], "o-", label="E(eps) vs reference")
        ax.loglog(table["eps"], table["weak_form_sup"], "s--", label="weak-form residual sup")
        ax.set_xlabel("eps")
        ax.set_ylabel("sup pairing gap")
        ax.legend(fontsize=8)
        ax.set_title("convergence of the rescaled density")
        save(fig, "fig_convergence.png")
    elif report.experiment == "msd":
        for name in sorted(report.series):
            table = report.series[name]
            fig, ax = plt.subplots(figsize=(5.4, 3.8), layout="constrained")
            ax.loglog(table["t"], table["agepde"], "-", label="age-structured")
            ax.loglog(table["t"], table["fracpde"], "--", label="fractional heat")
            ax.errorbar(
                table["t"], table["ctrw"], yerr=table["ctrw_stderr"],
                fmt=".", ms=4, lw=0.8, label="particle ensemble",
            )
            ax.loglog(table["t"], table["law"], ":", color="k", label="t^alpha law")
            ax.set_xlabel("t")
            ax.set_ylabel("mean square displacement")
            ax.legend(fontsize=8)
            ax.set_title(name.replace("_", " "))
            save(fig, f"fig_{name}.png")
    elif report.experiment == "renewal":
        fig, axes = plt.subplots(1, 2, figsize=(8.2, 3.4), layout="constrained")
        rec = report.series["mass_recovery"]
        keep = rec["t"] > 0
        axes[0].loglog(rec["t"][keep], rec["residual"][keep], "-")
        axes[0].set_xlabel("t")
        axes[0].set_ylabel("|psi * N - total|")
        rat = report.series["convolution_ratio"]
        axes[1].semilogx(rat["t"], rat["ratio"], "-")
        axes[1].set_xlabel("t")
        axes[1].set_ylabel("convolution ratio")
        save(fig, "fig_renewal.png")
    return written


def write_report(
    report: ExperimentReport,
    out_dir,
    formats=("csv", "json"),
    figures: bool = True,
    dir_name: str | None = None,
) -> list[Path]:
    """Write the report bundle into ``out_dir/<dir_name>/``.

    ``dir_name`` defaults to the config-digest prefix.  CSV tables first,
    figures next, and the JSON summary last (it lists everything else as
    artifacts).  Deterministic: identical reports give byte-identical
    files.  Returns the written paths.
    """
    formats = tuple(formats)
    for fmt in formats:
        if fmt not in ("csv", "json"):
            raise ValueError(f"unknown report format: {fmt!r}")
    run_dir = Path(out_dir) / (dir_name or report.config_digest[:16])
    run_dir.mkdir(parents=True, exist_ok=True)
    written = []
    artifacts = []
    if "csv" in formats:
        for name in sorted(report.series):
            path = run_dir / f"{name}.csv"
            _write_csv(path, report.series[name])
            written.append(path)
            artifacts.append(path.name)
    if figures:
        for name in _render_figures(report, run_dir):
            written.append(run_dir / name)
            artifacts.append(name)
    if "json" in formats:
        payload = {
            "experiment": report.experiment,
            "config_digest": report.config_digest,
            "config": report.config,
            "metrics": [
                {
                    "name": m.name,
                    "value": m.value,
                    "tol": m.tolerance,
                    "pass": m.passed,
                    "paper_ref": m.claim,
                }
                for m in report.metrics
            ],
            "artifacts": artifacts,
        }
        path = run_dir / "report.json"
        path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")
        written.append(path)
    return written


def read_report(run_dir) -> ExperimentReport:
    """Rebuild an :class:`ExperimentReport` from a written run directory."""
    run_dir = Path(run_dir)
    payload = json.loads((run_dir / "report.json").read_text())
    metrics = [
        MetricRecord(
            name=m["name"],
            value=m["value"],
            tolerance=m["tol"],
            passed=m["pass"],
            claim=m["paper_ref"],
        )
        for m in payload["metrics"]
    ]
    series = {}
    for name in payload["artifacts"]:
        if name.endswith(".csv"):
            series[name[:-4]] = _read_csv(run_dir / name)
    return ExperimentReport(
        experiment=payload["experiment"],
        config=payload["config"],
        config_digest=payload["config_digest"],
        metrics=metrics,
        series=series,
    )
