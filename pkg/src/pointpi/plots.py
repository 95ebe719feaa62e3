"""Static SVG panels for training curves, per-step metrics and forecast bands."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp keep the SVG text reproducible
matplotlib.rcParams["svg.hashsalt"] = "pointpi"
# keep labels as text elements rather than glyph paths
matplotlib.rcParams["svg.fonttype"] = "none"
SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return Path(path)


def loss_panel(epochs, path):
    e = epochs["epoch"].to_numpy()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(e, epochs["l_point_train"], label="point loss (train)")
    ax.plot(e, epochs["l_pi_train"], label="PI loss (train)")
    ax.plot(e, epochs["l_val"], label="total loss (val)")
    g1 = epochs["gamma1_mean"].to_numpy()
    weighted = g1 * epochs["l_point_train"].to_numpy() + (1 - g1) * epochs["l_pi_train"].to_numpy()
    ax.plot(e, weighted, "--", label="weighted loss (train)")
    if "best_l_val" in epochs:
        best = int(np.argmin(epochs["l_val"].to_numpy()))
        ax.axvline(e[best], color="grey", lw=0.8, ls=":", label=f"best epoch {e[best]}")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    return _save(fig, path)


def gamma_panel(epochs, path):
    e = epochs["epoch"].to_numpy()
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(e, epochs["gamma1_mean"], label="gamma1 (epoch mean)")
    if {"gamma1_min", "gamma1_max"} <= set(epochs.columns):
        ax.fill_between(e, epochs["gamma1_min"], epochs["gamma1_max"], alpha=0.25, label="batch range")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("epoch")
    ax.set_ylabel("weight on point loss")
    ax.legend(fontsize=8)
    return _save(fig, path)


def r_panel(epochs, path):
    e = epochs["epoch"].to_numpy()
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(e, epochs["r_day_mean"], label="r day (mean over steps)")
    ax.plot(e, epochs["r_night_mean"], label="r night (mean over steps)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("barrier sharpness r")
    ax.legend(fontsize=8)
    return _save(fig, path)


def metrics_panel(rows, path, target=0.9):
    steps = rows[rows["step"].astype(str) != "all"]
    k = steps["step"].astype(int).to_numpy()
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    axes[0].bar(k, steps["picp"], color="tab:blue")
    axes[0].axhline(target, color="tab:red", ls="--", label=f"target {target:g}")
    axes[0].set_ylim(0, 1.05)
    axes[0].set_title("PICP")
    axes[0].legend(fontsize=8, loc="lower right")
    axes[1].bar(k, 100 * steps["pinaw"], color="tab:green")
    axes[1].set_title("PINAW (%)")
    axes[2].bar(k, 100 * steps["pinalw"], color="tab:orange")
    axes[2].set_title("PINALW (%)")
    for ax in axes:
        ax.set_xlabel("forecast step")
        ax.set_xticks(k)
    return _save(fig, path)


def series_panel(preds, path, step=1, max_points=288):
    sel = preds[preds["step"] == step]
    if sel.empty:
        raise ValueError(f"no forecasts for step {step}")
    site = sel["site_id"].iloc[0]
    sel = sel[sel["site_id"] == site].head(max_points)
    t = np.arange(len(sel))
    fig, ax = plt.subplots(figsize=(10, 3.5))
    ax.fill_between(t, sel["l_hat"], sel["u_hat"], alpha=0.3, color="tab:blue", label="interval [l, u]")
    ax.plot(t, sel["y_obs"], color="black", lw=1.0, label="observed y")
    ax.plot(t, sel["y_hat"], color="tab:red", lw=1.0, label="point forecast")
    ticks = t[:: max(1, len(t) // 6)]
    ax.set_xticks(ticks)
    ax.set_xticklabels(sel["timestamp"].iloc[ticks], rotation=20, fontsize=7)
    ax.set_ylabel("irradiance (W/m$^2$)")
    ax.set_title(f"{site}, step {step}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def write_all(out_dir, epochs, eval_rows, preds=None, target=0.9, step=1):
    out_dir = Path(out_dir)
    written = [
        loss_panel(epochs, out_dir / "losses.svg"),
        gamma_panel(epochs, out_dir / "gamma.svg"),
        r_panel(epochs, out_dir / "r.svg"),
        metrics_panel(eval_rows, out_dir / "metrics.svg", target),
    ]
    if preds is not None:
        written.append(series_panel(preds, out_dir / "series.svg", step))
    return written
