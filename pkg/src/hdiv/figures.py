"""Matplotlib rendering of report figures, written to files next to the
delimited output (headless backend; no interactive use)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def instrument_figure(z_names, weighted_tilde, cv, alpha, path):
    """Per-instrument scaled debiased direct-effect magnitudes against the
    simulated critical value."""
    vals = np.abs(np.asarray(weighted_tilde, dtype=float))
    idx = np.arange(len(vals))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(vals)), 4.0))
    ax.bar(idx, vals, color=np.where(vals > cv, "firebrick", "steelblue"))
    ax.axhline(cv, color="black", linestyle="--", linewidth=1,
               label=f"critical value ({1 - alpha:.0%})")
    ax.set_xticks(idx)
    ax.set_xticklabels(z_names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel(r"$\sqrt{n}\,|$weighted debiased coefficient$|$")
    ax.set_title("Instrument-wise contribution to the max statistic")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def power_curve_figure(curve, path):
    """Rejection-rate curves for the max test and its power-enhanced version."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(curve.rho_grid, curve.rate_m, "o-", label="M")
    ax.plot(curve.rho_grid, curve.rate_pm, "s--", label="PM")
    ax.axhline(curve.config.alpha, color="gray", linestyle=":", linewidth=1)
    ax.axhline(1.0, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel(r"invalidity level $\rho_\pi$")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.05)
    c = curve.config
    ax.set_title(f"n={c.n}, p_x={c.p_x}, p_z={c.p_z}, {c.gamma_variant}, "
                 f"{'hetero' if c.hetero else 'homo'}skedastic")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def size_figure(table, path):
    """Bar chart of rejection rates with Monte Carlo error bars."""
    labels = ["M", "Q", "PM"]
    rates = [table.rate_m, table.rate_q, table.rate_pm]
    ses = [table.se_m, table.se_q, table.se_pm]
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    ax.bar(labels, rates, yerr=[2 * s for s in ses], capsize=4, color="steelblue")
    ax.axhline(table.config.alpha, color="black", linestyle="--", linewidth=1,
               label=f"nominal {table.config.alpha:g}")
    ax.set_ylabel("rejection rate")
    c = table.config
    ax.set_title(f"n={c.n}, p_x={c.p_x}, p_z={c.p_z} ({c.replications} reps)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def beta_figure(table, path):
    """Summary panel for the treatment-effect estimator table."""
    fig, ax = plt.subplots(figsize=(4.5, 4.0))
    names = ["MAE", "CI length"]
    vals = [table.mae, table.mean_ci_length]
    ax.bar(names, vals, color="steelblue")
    ax.set_title(
        f"coverage {table.coverage:.3f} "
        f"(target {1 - table.config.alpha:.2f}, {table.n_completed} reps)"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
