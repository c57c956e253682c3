"""Static report figures written next to the delimited result files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9.0,
    "axes.titlesize": 9.0,
    "axes.labelsize": 9.0,
    "legend.fontsize": 8.0,
    "xtick.labelsize": 8.0,
    "ytick.labelsize": 8.0,
}
# no Software/date chunks, so reruns are byte-identical
_PNG_META = {"Software": None}
# operating point each multi-user rule should converge to
_TARGETS = {"nash-tau": "tau", "rule2": "tau", "symmetric-opt": "p_star", "rule3": "p_star"}


def _new_figure(width=5.0, height=3.2):
    with matplotlib.rc_context(RC):
        fig = Figure(figsize=(width, height), dpi=120)
        ax = fig.add_subplot(111)
    return fig, ax


def plot_loss_curve(stats, path) -> Path:
    cfg = stats.config
    T = len(stats.curve_mean)
    slots = np.arange(1, T + 1)
    with matplotlib.rc_context(RC):
        fig, ax = _new_figure()
        ax.plot(slots, stats.curve_mean, color="C0", lw=1.2, label=f"{cfg.strategy} (mean)")
        if stats.curve_stderr is not None:
            lo = stats.curve_mean - 2 * stats.curve_stderr
            hi = stats.curve_mean + 2 * stats.curve_stderr
            ax.fill_between(slots, lo, hi, color="C0", alpha=0.25, lw=0, label="±2 s.e.")
        s = stats.summary
        if "lower_bound_coefficient" in s and s["lower_bound_coefficient"] > 0:
            ax.plot(slots, s["lower_bound_coefficient"] * np.log(slots), "k--", lw=0.9,
                    label="asymptotic lower bound")
        if "formula_centralized_loss" in s:
            ax.plot(slots, s["formula_centralized_loss"] / T * slots, "k--", lw=0.9,
                    label="closed form")
        ax.set_xlabel("slot")
        ax.set_ylabel("cumulative loss (bits)")
        if T > 100:
            ax.set_xscale("log")
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out, metadata=_PNG_META)
    return out


def plot_occupancy(stats, path) -> Path:
    occ = stats.occupancy
    T, n = occ.shape
    slots = np.arange(1, T + 1)
    # moving average keeps long runs legible
    w = max(1, T // 200)
    with matplotlib.rc_context(RC):
        fig, ax = _new_figure()
        for i in range(n):
            y = occ[:, i]
            if w > 1:
                y = np.convolve(y, np.ones(w) / w, mode="same")
            ax.plot(slots, y, lw=1.0, color=f"C{i % 10}", label=f"channel {i + 1}")
        target = _TARGETS.get(stats.config.strategy)
        ref = stats.summary.get(target) if target else None
        for i, v in enumerate(ref or ()):
            ax.axhline(v, color=f"C{i % 10}", ls="--", lw=0.8)
        ax.set_xlabel("slot")
        ax.set_ylabel("fraction sensing channel")
        ax.set_ylim(0, 1)
        ax.legend(loc="upper right", frameon=False, ncol=2)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out, metadata=_PNG_META)
    return out


def render_report(stats, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return [plot_loss_curve(stats, d / "loss_curve.png"), plot_occupancy(stats, d / "occupancy.png")]
