"""Delimited output and figure rendering for the command-line tools.

Every CSV starts with a commented header block echoing the fully resolved
configuration (hash included), so a figure can be regenerated from the CSV
alone and identical runs produce identical bytes.  Wall-clock metadata goes
to stderr, never into the files.

When figure output is requested, each report renders a PNG next to the CSV
with the same stem.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .config import config_hash_for, resolved_items
from .dynamics import CountingTrajectory, HomodyneTrajectory, MasterEquationResult
from .ensemble import EnsembleResult, EnsembleSpec, TrajectoryOutcome
from .inference import FilterRun

_FIG_DPI = 150


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _header_lines(kind: str, model, spec: EnsembleSpec | None = None, extra: dict | None = None) -> list[str]:
    lines = [f"# pulseprobe {kind} v1", f"# config_hash = {config_hash_for(model, spec)}"]
    lines += [f"# {key} = {value}" for key, value in resolved_items(model, spec)]
    for key, value in (extra or {}).items():
        lines.append(f"# {key} = {value}")
    return lines


def _write_table(path, header_lines: list[str], columns: list[str], rows) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(header_lines) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def figure_path(out_path) -> str:
    out = str(out_path)
    stem = out.rsplit(".", 1)[0] if "." in out.rsplit("/", 1)[-1] else out
    return stem + ".png"


# ------------------------------------------------------------ master equation

def write_master_equation_csv(path, result: MasterEquationResult, model) -> None:
    rows = zip(result.times, result.cavity_photons, result.excited_population, result.flux_integral)
    _write_table(
        path,
        _header_lines("master-equation", model),
        ["t", "cavity_photons", "excited_population", "integrated_flux"],
        rows,
    )


def render_master_equation_figure(path, result: MasterEquationResult) -> None:
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(result.times, result.cavity_photons, "k-", label="cavity photons")
    axes[0].plot(result.times, result.flux_integral, "r-", label="integrated detection rate")
    axes[0].set_ylabel("photons")
    axes[0].legend(loc="best")
    axes[1].plot(result.times, result.excited_population, "b-")
    axes[1].set_ylabel(r"$P_e$")
    axes[2].plot(result.times, result.flux, "g-")
    axes[2].set_ylabel("detection rate")
    axes[2].set_xlabel(r"time  [$1/\gamma$]")
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


# ----------------------------------------------------------------- trajectory

def write_observables_csv(path, traj: CountingTrajectory | HomodyneTrajectory, model) -> None:
    extra = {"seed": traj.record.seed, "clicks": traj.click_count} if hasattr(traj, "click_count") else {
        "seed": traj.record.seed
    }
    columns = ["t", "cavity_photons", "excited_population"]
    series = [traj.times, traj.cavity_photons, traj.excited_population]
    if isinstance(traj, CountingTrajectory):
        columns.append("integrated_rate")
        series.append(traj.flux_integral)
    _write_table(path, _header_lines("trajectory-observables", model, extra=extra), columns, zip(*series))


def write_posterior_csv(path, times, labels, posteriors, qe, model, spec=None, extra=None) -> None:
    columns = ["t"] + [f"p_{label}" for label in labels] + ["Q_e"]
    rows = ([t] + list(p) + [q] for t, p, q in zip(times, posteriors, qe))
    _write_table(path, _header_lines("posteriors", model, spec, extra), columns, rows)


def render_trajectory_figure(path, traj, record, posterior_run: FilterRun | None = None) -> None:
    n_panels = 3 if posterior_run is None else 4
    fig, axes = plt.subplots(n_panels, 1, figsize=(7, 2.2 * n_panels), sharex=True)
    axes[0].plot(traj.times, traj.cavity_photons, "k-", label="cavity photons")
    if isinstance(traj, CountingTrajectory):
        axes[0].plot(traj.times, traj.flux_integral, "r-", label="integrated rate")
    axes[0].set_ylabel("photons")
    axes[0].legend(loc="best")
    axes[1].plot(traj.times, traj.excited_population, "b-")
    axes[1].set_ylabel(r"$P_e$")
    if record.scheme == "counting":
        times = record.click_times
        axes[2].vlines(times, 0.0, 1.0, colors="k", lw=0.8)
        axes[2].set_ylim(0, 1.2)
        axes[2].set_yticks([])
        axes[2].set_ylabel("clicks")
    else:
        axes[2].plot(np.arange(1, record.n_steps + 1) * record.dt, record.increments, "g-", lw=0.4)
        axes[2].set_ylabel("dY")
    if posterior_run is not None:
        for j, label in enumerate(posterior_run.labels):
            axes[3].plot(posterior_run.times, posterior_run.posteriors[:, j], label=f"p({label})")
        axes[3].plot(posterior_run.times, posterior_run.error_probabilities, "k--", label=r"$Q_e$")
        axes[3].set_ylim(-0.02, 1.02)
        axes[3].legend(loc="best", fontsize=8)
        axes[3].set_ylabel("posterior")
    axes[-1].set_xlabel(r"time  [$1/\gamma$]")
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def render_outcome_figure(path, outcome: TrajectoryOutcome) -> None:
    fig, axes = plt.subplots(3, 1, figsize=(7, 6.6), sharex=True)
    if outcome.cavity_photons is not None:
        axes[0].plot(outcome.times, outcome.cavity_photons, "k-")
    axes[0].set_ylabel("cavity photons")
    record = outcome.record
    if record.scheme == "counting":
        axes[1].vlines(record.click_times, 0.0, 1.0, colors="k", lw=0.8)
        axes[1].set_ylim(0, 1.2)
        axes[1].set_yticks([])
        axes[1].set_ylabel("clicks")
    else:
        axes[1].plot(np.arange(1, record.n_steps + 1) * record.dt, record.increments, "g-", lw=0.4)
        axes[1].set_ylabel("dY")
    for j, label in enumerate(outcome.labels):
        axes[2].plot(outcome.times, outcome.posteriors[:, j], label=f"p({label})")
    axes[2].plot(outcome.times, outcome.error_probabilities, "k--", label=r"$Q_e$")
    axes[2].set_ylim(-0.02, 1.02)
    axes[2].legend(loc="best", fontsize=8)
    axes[2].set_ylabel("posterior")
    axes[2].set_xlabel(r"time  [$1/\gamma$]")
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def render_filter_figure(path, run: FilterRun, record) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(7, 4.8), sharex=True)
    if record.scheme == "counting":
        axes[0].vlines(record.click_times, 0.0, 1.0, colors="k", lw=0.8)
        axes[0].set_ylim(0, 1.2)
        axes[0].set_yticks([])
        axes[0].set_ylabel("clicks")
    else:
        axes[0].plot(np.arange(1, record.n_steps + 1) * record.dt, record.increments, "g-", lw=0.4)
        axes[0].set_ylabel("dY")
    for j, label in enumerate(run.labels):
        axes[1].plot(run.times, run.posteriors[:, j], label=f"p({label})")
    axes[1].plot(run.times, run.error_probabilities, "k--", label=r"$Q_e$")
    axes[1].set_ylim(-0.02, 1.02)
    axes[1].legend(loc="best", fontsize=8)
    axes[1].set_ylabel("posterior")
    axes[1].set_xlabel(r"time  [$1/\gamma$]")
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


# -------------------------------------------------------------------- ensemble

def write_ensemble_csv(path, result: EnsembleResult, spec: EnsembleSpec) -> None:
    columns = ["t", "mean_Qe", "se_Qe"]
    series = [result.times, result.mean_error, result.se_error]
    if result.mean_cavity_photons is not None:
        columns += ["mean_cavity_photons", "mean_excited_population"]
        series += [result.mean_cavity_photons, result.mean_excited]
    _write_table(path, _header_lines("ensemble", spec.base, spec), columns, zip(*series))


def write_final_posteriors_csv(path, result: EnsembleResult, spec: EnsembleSpec) -> None:
    columns = ["index", "truth"] + [f"p_{label}" for label in result.labels] + ["Q_e"]
    rows = (
        [i, truth] + list(p) + [1.0 - max(p)]
        for i, (truth, p) in enumerate(zip(result.truth_labels, result.final_posteriors))
    )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(_header_lines("final-posteriors", spec.base, spec)) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(x if isinstance(x, str) else _fmt(x) for x in row) + "\n")


def render_ensemble_figure(path, result: EnsembleResult) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(result.times, result.mean_error, "k-", label=r"mean $Q_e$")
    ax.fill_between(
        result.times,
        result.mean_error - result.se_error,
        result.mean_error + result.se_error,
        color="k",
        alpha=0.25,
        lw=0,
        label=r"$\pm$ 1 s.e.",
    )
    ax.set_xlabel(r"time  [$1/\gamma$]")
    ax.set_ylabel(r"mean readout error $Q_e$")
    ax.set_ylim(0, max(0.55, float(result.mean_error.max()) * 1.05))
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)
