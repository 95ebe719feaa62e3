"""Hard-count interval and point metrics, per forecast step and pooled."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DAY_START_HOUR = 6.0
DAY_END_HOUR = 18.0


def _arrays(*xs):
    out = [np.asarray(x, dtype=np.float64).ravel() for x in xs]
    n = out[0].size
    if any(a.size != n for a in out):
        raise ValueError("inputs must have equal lengths")
    if n == 0:
        raise ValueError("metrics need at least one sample")
    return out


def _widths(lower, upper):
    lower, upper = _arrays(lower, upper)
    w = upper - lower
    if np.any(w < 0):
        raise ValueError(f"{int(np.sum(w < 0))} intervals have upper < lower")
    return w


def picp_hard(y, lower, upper) -> float:
    """Fraction of ``y`` inside the closed interval ``[lower, upper]``."""
    y, lower, upper = _arrays(y, lower, upper)
    return float(np.mean((lower <= y) & (y <= upper)))


def pinaw(lower, upper, r_q: float) -> float:
    if r_q <= 0:
        raise ValueError("r_q must be positive")
    return float(np.mean(_widths(lower, upper)) / r_q)


def pinalw(lower, upper, tau: float, r_q: float) -> float:
    """Mean of the ``floor((1 - tau) N)`` largest widths over ``r_q``."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if r_q <= 0:
        raise ValueError("r_q must be positive")
    w = _widths(lower, upper)
    k = int(math.floor((1 - tau) * w.size))
    if k < 1:
        raise ValueError(f"tau={tau} leaves no large widths among {w.size} samples")
    return float(np.mean(np.sort(w)[::-1][:k]) / r_q)


def winkler(y, lower, upper, p: float, r_q: float) -> float:
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if r_q <= 0:
        raise ValueError("r_q must be positive")
    y, lower, upper = _arrays(y, lower, upper)
    w = _widths(lower, upper)
    under = np.where(y < lower, lower - y, 0.0)
    over = np.where(y > upper, y - upper, 0.0)
    return float(np.mean(w + 2.0 / (1.0 - p) * (under + over)) / r_q)


def point_metrics(y, y_hat) -> tuple[float, float, float]:
    """``(mae, rmse, mbe)`` with the bias signed as ``mean(y - y_hat)``."""
    y, y_hat = _arrays(y, y_hat)
    err = y - y_hat
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err**2))), float(np.mean(err))


def interquantile_range(y, lo: float = 0.05, hi: float = 0.95) -> float:
    """``q(hi) - q(lo)`` with linearly interpolated order statistics."""
    if not hi > lo:
        raise ValueError("hi must exceed lo")
    y = np.asarray(y, dtype=np.float64).ravel()
    y = y[np.isfinite(y)]
    if y.size < 2:
        raise ValueError("need at least two finite values")
    r_q = float(np.quantile(y, hi) - np.quantile(y, lo))
    if r_q <= 0:
        raise ValueError("degenerate data: inter-quantile range is zero; pass r_q explicitly")
    return r_q


def daytime_filter(hours=None, y=None, threshold=None):
    """Boolean mask of daytime samples.

    With ``hours`` (local decimal hour of each target) keeps ``6 <= h < 18``;
    otherwise keeps ``y > threshold``.
    """
    if hours is not None:
        h = np.asarray(hours, dtype=np.float64)
        return (h >= DAY_START_HOUR) & (h < DAY_END_HOUR)
    if y is not None and threshold is not None:
        return np.asarray(y, dtype=np.float64) > threshold
    raise ValueError("daytime filtering needs target hours or a (y, threshold) pair")


METRIC_COLUMNS = ["step", "n", "picp", "pinaw", "pinalw", "winkler", "mae", "rmse", "mbe"]


@dataclass
class MetricReport:
    rows: list[dict]
    r_q: float
    p: float
    tau: float
    daytime_only: bool
    notes: list[str] = field(default_factory=list)

    def step_rows(self):
        return [r for r in self.rows if r["step"] != "all"]

    def pooled(self):
        return next(r for r in self.rows if r["step"] == "all")

    def column(self, name):
        return np.array([r[name] for r in self.step_rows()], dtype=np.float64)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

    def to_table(self) -> str:
        scope = "daytime (06:00-18:00)" if self.daytime_only else "all hours"
        lines = [
            f"Evaluation on {scope}; R_Q = {self.r_q:.3f}; nominal p = {self.p}; PINALW tau = {self.tau}",
            f"{'step':>5} {'n':>7} {'PICP':>7} {'PINAW%':>8} {'PINALW%':>8} {'Winkler':>8} {'MAE':>8} {'RMSE':>8} {'MBE':>8}",
        ]
        for r in self.rows:
            flag = " <" if r["picp"] < self.p else ""
            lines.append(
                f"{r['step']:>5} {r['n']:>7d} {r['picp']:7.3f} {100 * r['pinaw']:8.2f} "
                f"{100 * r['pinalw']:8.2f} {r['winkler']:8.3f} {r['mae']:8.2f} {r['rmse']:8.2f} {r['mbe']:8.2f}{flag}"
            )
        lines.extend(self.notes)
        return "\n".join(lines)


def _row(step, y, lower, point, upper, r_q, p, tau):
    mae, rmse, mbe = point_metrics(y, point)
    return {
        "step": step,
        "n": int(np.asarray(y).size),
        "picp": picp_hard(y, lower, upper),
        "pinaw": pinaw(lower, upper, r_q),
        "pinalw": pinalw(lower, upper, tau, r_q),
        "winkler": winkler(y, lower, upper, p, r_q),
        "mae": mae,
        "rmse": rmse,
        "mbe": mbe,
    }


def evaluate(y, lower, point, upper, r_q, hours=None, p=0.9, tau=0.5, daytime_only=True) -> MetricReport:
    """Metrics per step (columns of the N x H inputs) and pooled over all steps.

    Inputs share one unit (e.g. W/m^2) and ``r_q`` is expressed in it.
    """
    y, lower, point, upper = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (y, lower, point, upper))
    if y.shape[0] == 1 and y.ndim == 2 and lower.shape != y.shape:
        raise ValueError("inputs must share a shape")
    if daytime_only:
        if hours is None:
            raise ValueError("daytime-only evaluation needs the hour of each target")
        keep = daytime_filter(hours=hours)
    else:
        keep = np.ones(y.shape, dtype=bool)
    rows = []
    for k in range(y.shape[1]):
        m = keep[:, k]
        if not m.any():
            raise ValueError(f"step {k + 1}: no samples left after filtering")
        rows.append(_row(k + 1, y[m, k], lower[m, k], point[m, k], upper[m, k], r_q, p, tau))
    rows.append(_row("all", y[keep], lower[keep], point[keep], upper[keep], r_q, p, tau))
    return MetricReport(rows, float(r_q), p, tau, daytime_only)
