"""Rendering: regression tables, curve CSVs, and figure files.

Reports are written next to the run directory they describe.  Figures are
matplotlib PNGs rendered headlessly; every artifact carries the run's
config hash so mixed-provenance reports are refusable downstream.
"""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimators import ForgettingCurve, RegressionResult, moving_average


def regression_table_text(fits: dict[str, RegressionResult],
                          config_hash: str = "") -> str:
    """Coefficient table across counterfactual roles.

    One block per coefficient: value with significance stars on the first
    line, bracketed 95% CI on the second, mirroring the usual layout of
    audit regression tables.
    """
    roles = list(fits)
    names = fits[roles[0]].names
    width = 24
    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    header = "".ljust(width) + "".join(r.ljust(width) for r in roles)
    lines.append(header)
    lines.append("-" * len(header))
    for name in names:
        value_cells, ci_cells = [], []
        for role in roles:
            entry = fits[role][name]
            value_cells.append(
                f"{entry['coef']:.3f} {entry['stars']}".ljust(width))
            lo, hi = entry["ci"]
            ci_cells.append(f"[{lo:.3f}, {hi:.3f}]".ljust(width))
        lines.append(name.ljust(width) + "".join(value_cells))
        lines.append("".ljust(width) + "".join(ci_cells))
    lines.append("-" * len(header))
    r2_cells = "".join(f"{fits[r].r_squared:.3f}".ljust(width)
                       for r in roles)
    lines.append("R2".ljust(width) + r2_cells)
    n_cells = "".join(f"{fits[r].n_obs}".ljust(width) for r in roles)
    lines.append("N".ljust(width) + n_cells)
    lines.append("+ p < 0.1; * p < 0.05; ** p < 0.01; *** p < 0.001")
    return "\n".join(lines) + "\n"


def write_regression_json(path, fits: dict[str, RegressionResult],
                          config_hash: str = "", run_seed=None) -> None:
    payload = {
        "config_hash": config_hash,
        "run_seed": run_seed,
        "fits": {role: fit.to_dict() for role, fit in fits.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curves_csv(path, curves: dict[tuple[str, str], ForgettingCurve],
                     config_hash: str = "") -> None:
    """`surface,arm,step,mean_score,ci_lo,ci_hi,frac_fR` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"#config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["surface", "arm", "step", "mean_score",
                         "ci_lo", "ci_hi", "frac_fR"])
        for (surface, arm), curve in sorted(curves.items()):
            for i, step in enumerate(curve.steps):
                frac = ("" if curve.frac_fr is None
                        else repr(float(curve.frac_fr[i])))
                writer.writerow([surface, arm, int(step),
                                 repr(float(curve.mean[i])),
                                 repr(float(curve.ci_lo[i])),
                                 repr(float(curve.ci_hi[i])), frac])


def plot_trajectories(path, sessions_by_role: dict, n_learning: int,
                      smooth_window: int = 5, title: str = "") -> None:
    """Per-step watched partisanship for one replication's bots."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for role, session in sessions_by_role.items():
        scores = session.column("watch_score")
        steps = np.arange(1, len(scores) + 1)
        ax.plot(steps, moving_average(scores, smooth_window), label=role)
    ax.axvspan(n_learning + 0.5, ax.get_xlim()[1], color="0.9", zorder=0)
    ax.axhline(0.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("watched partisan score")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_observation_boxplots(path, scores_by_role: dict,
                              title: str = "") -> None:
    """Distribution of per-session mean observation-phase partisanship."""
    roles = list(scores_by_role)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([scores_by_role[r] for r in roles], tick_labels=roles)
    ax.axhline(0.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_ylabel("mean watched partisan score (observation)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_marginal_effects(path, effects_by_role: dict, values,
                          feature: str = "n_fR6") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for role, effects in effects_by_role.items():
        ax.plot(values, effects, marker="o", label=role)
    ax.axhline(0.0, color="k", linestyle="--", linewidth=0.8)
    ax.set_xlabel(f"burst count {feature}")
    ax.set_ylabel("predicted preference gap")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_forgetting_curves(path, curves: dict[tuple[str, str],
                                              ForgettingCurve]) -> None:
    surfaces = sorted({surface for surface, _ in curves})
    fig, axes = plt.subplots(1, len(surfaces),
                             figsize=(5 * len(surfaces), 4), squeeze=False)
    for ax, surface in zip(axes[0], surfaces):
        for (s, arm), curve in sorted(curves.items()):
            if s != surface:
                continue
            ax.plot(curve.steps, curve.mean, label=arm)
            ax.fill_between(curve.steps, curve.ci_lo, curve.ci_hi,
                            alpha=0.2)
            if curve.reached:
                ax.axvline(curve.forgetting_step, linestyle=":",
                           linewidth=0.8)
        ax.axhline(curves[(surface, arm)].baseline, color="k",
                   linestyle="--", linewidth=0.8)
        ax.set_title(surface.lower())
        ax.set_xlabel("observation step")
        ax.set_ylabel("mean recommended partisan score")
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
