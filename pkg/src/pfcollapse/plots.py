"""Figure rendering for harness reports and filter traces.

Every renderer takes the rows a report produced and writes one PNG.
Plotting is presentation only: the CSV files remain the contract, and
nothing here feeds back into any computation.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _groups(rows, key):
    order = []
    grouped = {}
    for row in rows:
        k = getattr(row, key)
        if k not in grouped:
            grouped[k] = []
            order.append(k)
        grouped[k].append(row)
    return [(k, grouped[k]) for k in order]


def plot_sweep(rows, path: str) -> None:
    """Mean max weight against dimension, one line per ensemble size."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for n, group in _groups(rows, "n"):
        d = [r.d_prime for r in group]
        ax.errorbar(
            d,
            [r.mean_max_weight for r in group],
            yerr=[r.se_max_weight for r in group],
            marker="o",
            capsize=3,
            label=f"n = {n}",
        )
    ax.set_xscale("log")
    ax.set_xlabel("d'")
    ax.set_ylabel("mean max weight")
    ax.set_ylim(0.0, 1.05)
    ax.axhline(1.0, color="gray", lw=0.8, ls=":")
    ax.legend()
    ax.set_title(rows[0].family if rows else "")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_scaling(rows, path: str) -> None:
    """Scaled mean gap-sum statistic under both conventions, with their limits."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for n, group in _groups(rows, "n"):
        d = [r.d_prime for r in group]
        ax.errorbar(
            d,
            [r.ratio_A2 for r in group],
            yerr=[r.se_ratio_A2 for r in group],
            marker="o",
            capsize=3,
            label=f"consistent scaling, n = {n}",
        )
        ax.errorbar(
            d,
            [r.ratio_unnorm for r in group],
            yerr=[r.se_ratio_unnorm for r in group],
            marker="s",
            ls="--",
            capsize=3,
            label=f"unhalved scaling, n = {n}",
        )
    ax.axhline(1.0, color="gray", lw=0.8, ls=":")
    ax.axhline(2.0, color="gray", lw=0.8, ls=":")
    ax.set_xscale("log")
    ax.set_xlabel("d'")
    ax.set_ylabel("scaled mean of T")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_no_collapse(rows, path: str) -> None:
    """Estimator error and max weight against ensemble size."""
    fig, (ax_err, ax_w) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    for d, group in _groups(rows, "d_prime"):
        n = [r.n for r in group]
        ax_err.errorbar(
            n,
            [r.mean_abs_err for r in group],
            yerr=[r.se_abs_err for r in group],
            marker="o",
            capsize=3,
            label=f"d' = {d}",
        )
        ax_w.plot(n, [r.mean_max_weight for r in group], marker="o", label=f"d' = {d}")
    for ax in (ax_err, ax_w):
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.legend(fontsize=8)
    ax_err.set_yscale("log")
    ax_err.set_ylabel(f"mean |estimate - oracle|, g = {rows[0].g}" if rows else "")
    ax_w.set_ylabel("mean max weight")
    ax_w.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_normality(rows, path: str) -> None:
    """Distance of the scores from normal against dimension."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    d = np.array([r.d_prime for r in rows], dtype=float)
    ks = np.array([r.ks_distance for r in rows])
    ax.loglog(d, ks, marker="o", label="KS distance")
    if d.size > 1 and np.all(d > 0) and np.all(ks > 0):
        ref = ks[0] * np.sqrt(d[0] / d)
        ax.loglog(d, ref, ls=":", color="gray", label="d'^{-1/2} reference")
    ax.set_xlabel("d'")
    ax.set_ylabel("KS distance to standard normal")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_lyapunov(rows, path: str) -> None:
    """Median quotient per order, with the 90th percentile as whiskers."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for k, group in _groups(rows, "k"):
        d = np.array([r.d_prime for r in group], dtype=float)
        med = np.array([r.median_L for r in group])
        p90 = np.array([r.p90_L for r in group])
        ax.errorbar(
            d, med, yerr=np.vstack([np.zeros_like(med), p90 - med]),
            marker="o", capsize=3, label=f"k = {k}",
        )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("d'")
    ax.set_ylabel("Lyapunov quotient (median, whisker to p90)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trace(trace, path: str) -> None:
    """Collapse diagnostics and first-coordinate tracking for one filter run."""
    t = np.arange(trace.steps)
    fig, (ax_w, ax_m) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    ax_w.plot(t, trace.max_weight, marker="o", label="max weight")
    ax_w.plot(t, trace.ess / trace.n, marker="s", label="ESS / n")
    for step in t[trace.resampled]:
        ax_w.axvline(step, color="gray", lw=0.5, alpha=0.4)
    ax_w.set_ylim(0.0, 1.05)
    ax_w.set_ylabel("weight diagnostics")
    ax_w.legend(fontsize=8)
    band = 3.0 * np.sqrt(trace.kalman_cov[:, 0, 0])
    ax_m.plot(t, trace.kalman_mean[:, 0], color="black", label="exact posterior mean")
    ax_m.fill_between(
        t,
        trace.kalman_mean[:, 0] - band,
        trace.kalman_mean[:, 0] + band,
        color="black",
        alpha=0.12,
        label="3 sigma posterior band",
    )
    ax_m.plot(t, trace.pf_mean[:, 0], marker="o", ls="--", label="particle mean")
    ax_m.set_xlabel("t")
    ax_m.set_ylabel("first state coordinate")
    ax_m.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
