"""Irradiance tables, windowing, day-block splitting and a synthetic generator.

A :class:`SeriesTable` holds one row per 15-minute grid point and site with the
columns of the CSV schema. Missing values are NaN and mask their row.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import pandas as pd

from .metrics import interquantile_range

GRID = pd.Timedelta(minutes=15)
POINTS_PER_DAY = 96
CHANNELS = ["y", "ci", "i_clr", "i_cams"]
COLUMNS = ["timestamp", "site_id", *CHANNELS]
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"

SKY_LABELS = ("clear", "partly_cloudy", "cloudy")
CLEAR_THRESHOLD = 0.7
PARTLY_THRESHOLD = 0.4
# clear-sky irradiance below this (W/m^2) is too close to dawn/dusk for a stable index
CLEAR_SKY_MIN = 50.0


class DataError(ValueError):
    """Raised for malformed input files and tables."""


@dataclass
class SeriesTable:
    frame: pd.DataFrame

    def __post_init__(self):
        missing = [c for c in COLUMNS if c not in self.frame.columns]
        if missing:
            raise DataError(f"table lacks columns {missing}")
        self.frame = self.frame[COLUMNS].sort_values(["site_id", "timestamp"], kind="stable").reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.frame[CHANNELS].to_numpy(dtype=np.float64)).all(axis=1)

    @property
    def sites(self) -> list[str]:
        return list(dict.fromkeys(self.frame["site_id"]))

    def days(self) -> pd.DataFrame:
        """Distinct (site_id, date) blocks in table order."""
        f = self.frame
        return pd.DataFrame({"site_id": f["site_id"], "date": f["timestamp"].dt.date}).drop_duplicates().reset_index(drop=True)

    def select_days(self, blocks: pd.DataFrame) -> "SeriesTable":
        f = self.frame
        keys = set(zip(blocks["site_id"], blocks["date"]))
        keep = np.fromiter((k in keys for k in zip(f["site_id"], f["timestamp"].dt.date)), bool, len(f))
        return SeriesTable(f[keep].copy())


def _hours(ts: pd.Series) -> np.ndarray:
    return (ts.dt.hour + ts.dt.minute / 60.0).to_numpy(dtype=np.float64)


def hour_encoding(hours):
    """``sin(pi h / 24)``: 0 at midnight from either side, 1 at noon."""
    return np.sin(np.pi * np.asarray(hours, dtype=np.float64) / 24.0)


def write_csv(table: SeriesTable, path):
    f = table.frame.copy()
    f["timestamp"] = f["timestamp"].dt.strftime(TIME_FORMAT)
    f.to_csv(path, index=False, na_rep="", float_format=None)


def load_csv(path, columns=COLUMNS) -> SeriesTable:
    """Parse and grid-validate a CSV in the irradiance schema.

    Rows absent from a site's 15-minute grid are inserted as missing values.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV: {exc}") from exc
    absent = [c for c in columns if c not in raw.columns]
    if absent:
        raise DataError(f"{path}: missing columns {absent}")
    lines = np.arange(len(raw)) + 2  # header is line 1

    ts = pd.to_datetime(raw["timestamp"], format="ISO8601", errors="coerce")
    bad = ts.isna().to_numpy()
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"{path}: line {lines[i]}: unparseable timestamp {raw['timestamp'].iloc[i]!r}")
    if ts.dt.tz is not None:
        raise DataError(f"{path}: timestamps must be local time without an offset")
    off = ((ts.dt.minute % 15) != 0) | (ts.dt.second != 0) | (ts.dt.microsecond != 0)
    if off.any():
        i = int(np.argmax(off.to_numpy()))
        raise DataError(f"{path}: line {lines[i]}: timestamp {raw['timestamp'].iloc[i]} is off the 15-minute grid")
    if (raw["site_id"] == "").any():
        i = int(np.argmax((raw["site_id"] == "").to_numpy()))
        raise DataError(f"{path}: line {lines[i]}: empty site_id")

    values = {}
    for col in CHANNELS:
        # Python's float() round-trips repr output exactly; pandas' fast parser does not
        parsed = np.empty(len(raw))
        for i, text in enumerate(raw[col].str.strip()):
            try:
                parsed[i] = float(text) if text else np.nan
            except ValueError:
                raise DataError(f"{path}: line {lines[i]}: column {col!r} has non-numeric value {text!r}") from None
        values[col] = parsed

    frame = pd.DataFrame({"timestamp": ts, "site_id": raw["site_id"], **values})
    dup = frame.duplicated(["site_id", "timestamp"], keep="first").to_numpy()
    if dup.any():
        i = int(np.argmax(dup))
        raise DataError(
            f"{path}: line {lines[i]}: duplicate timestamp {raw['timestamp'].iloc[i]} for site {raw['site_id'].iloc[i]!r}"
        )
    return SeriesTable(_complete_grid(frame))


def _complete_grid(frame: pd.DataFrame) -> pd.DataFrame:
    parts = []
    for site, g in frame.groupby("site_id", sort=False):
        g = g.set_index("timestamp").sort_index()
        grid = pd.date_range(g.index[0], g.index[-1], freq=GRID)
        g = g.reindex(grid)
        g.index.name = "timestamp"
        g["site_id"] = site
        parts.append(g.reset_index())
    return pd.concat(parts, ignore_index=True) if parts else frame


def fill_gaps(table: SeriesTable, max_gap=pd.Timedelta(hours=6)) -> SeriesTable:
    """Linearly interpolate interior runs of missing values spanning at most ``max_gap``.

    A run of ``m`` missing grid points spans ``m * 15 min``. Each channel is
    filled independently; leading and trailing runs have no bracket and stay missing.
    """
    max_gap = pd.Timedelta(max_gap)
    limit = int(max_gap // GRID)
    f = table.frame.copy()
    for _, idx in f.groupby("site_id", sort=False).indices.items():
        ts = f["timestamp"].to_numpy()[idx]
        contiguous = np.all(np.diff(ts) == np.timedelta64(GRID))
        segments = [idx] if contiguous else np.split(idx, np.flatnonzero(np.diff(ts) != np.timedelta64(GRID)) + 1)
        for seg in segments:
            for col in CHANNELS:
                v = f[col].to_numpy()[seg].copy()
                _fill_runs(v, limit)
                f.loc[seg, col] = v
    return SeriesTable(f)


def _fill_runs(v: np.ndarray, limit: int):
    miss = ~np.isfinite(v)
    if not miss.any() or miss.all():
        return
    edges = np.diff(np.concatenate([[0], miss.astype(np.int8), [0]]))
    starts, stops = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    for a, b in zip(starts, stops):
        if a == 0 or b == len(v) or b - a > limit:
            continue
        left, right = v[a - 1], v[b]
        t = np.arange(1, b - a + 1) / (b - a + 1)
        v[a:b] = left + (right - left) * t


@dataclass(frozen=True)
class Normalization:
    """Irradiance scale ``r_q`` (W/m^2) fitted on the training split."""

    r_q: float
    lo: float = 0.05
    hi: float = 0.95

    @classmethod
    def fit(cls, table: SeriesTable, lo=0.05, hi=0.95) -> "Normalization":
        y = table.frame["y"].to_numpy(dtype=np.float64)
        return cls(interquantile_range(y[np.isfinite(y)], lo, hi), lo, hi)


@dataclass
class WindowBatch:
    """Aligned training samples; irradiance channels are divided by ``r_q``."""

    lag: np.ndarray  # N x L x 3: y, ci, hour encoding
    future: np.ndarray  # N x H x 3: i_clr, i_cams, hour encoding
    target: np.ndarray  # N x H
    hours: np.ndarray  # N x H, local hour of each target
    target_time: np.ndarray  # N x H datetime64
    site: np.ndarray  # N
    r_q: float
    notes: list[str] = field(default_factory=list)

    def __len__(self):
        return self.target.shape[0]

    @property
    def horizon(self):
        return self.target.shape[1]

    @property
    def daytime(self) -> np.ndarray:
        return (self.hours >= 6.0) & (self.hours < 18.0)

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(
            self.lag[idx], self.future[idx], self.target[idx], self.hours[idx],
            self.target_time[idx], self.site[idx], self.r_q, list(self.notes),
        )

    @classmethod
    def concatenate(cls, batches) -> "WindowBatch":
        batches = list(batches)
        return cls(
            *(np.concatenate([getattr(b, k) for b in batches]) for k in ("lag", "future", "target", "hours", "target_time", "site")),
            batches[0].r_q,
        )


def build_windows(table: SeriesTable, lag_window: int, horizon: int, norm: Normalization) -> WindowBatch:
    """Stride-one windows of ``lag_window`` inputs followed by ``horizon`` targets.

    A window is kept only if all its rows are valid and consecutive on the grid.
    """
    if lag_window < 1 or horizon < 1:
        raise ValueError("lag_window and horizon must be >= 1")
    span = lag_window + horizon
    f = table.frame
    r_q = float(norm.r_q)
    valid = table.valid
    parts = []
    for site, idx in f.groupby("site_id", sort=False).indices.items():
        g = f.iloc[idx]
        n = len(g)
        if n < span:
            continue
        ts = g["timestamp"].to_numpy()
        ok = valid[idx]
        link = np.diff(ts) == np.timedelta64(GRID)
        # window at s needs ok[s:s+span] and link[s:s+span-1] all true
        bad_row = np.concatenate([[0], np.cumsum(~ok)])
        bad_link = np.concatenate([[0], np.cumsum(~link)])
        s = np.arange(n - span + 1)
        good = (bad_row[s + span] == bad_row[s]) & (bad_link[s + span - 1] == bad_link[s])
        starts = s[good]
        if starts.size == 0:
            continue
        h = _hours(g["timestamp"])
        enc = hour_encoding(h)
        y = g["y"].to_numpy(dtype=np.float64) / r_q
        ci = g["ci"].to_numpy(dtype=np.float64)
        clr = g["i_clr"].to_numpy(dtype=np.float64) / r_q
        cams = g["i_cams"].to_numpy(dtype=np.float64) / r_q
        lag_rows = starts[:, None] + np.arange(lag_window)
        tgt_rows = starts[:, None] + lag_window + np.arange(horizon)
        parts.append(WindowBatch(
            lag=np.stack([y[lag_rows], ci[lag_rows], enc[lag_rows]], axis=-1),
            future=np.stack([clr[tgt_rows], cams[tgt_rows], enc[tgt_rows]], axis=-1),
            target=y[tgt_rows],
            hours=h[tgt_rows],
            target_time=ts[tgt_rows],
            site=np.full(starts.size, site, dtype=object),
            r_q=r_q,
        ))
    if not parts:
        empty = WindowBatch(
            np.zeros((0, lag_window, 3)), np.zeros((0, horizon, 3)), np.zeros((0, horizon)),
            np.zeros((0, horizon)), np.zeros((0, horizon), dtype="datetime64[ns]"), np.zeros(0, dtype=object), r_q,
        )
        empty.notes.append(f"no run of {span} consecutive valid grid points; no windows built")
        return empty
    return WindowBatch.concatenate(parts)


def daily_clear_sky_index(table: SeriesTable) -> pd.DataFrame:
    """Mean of ``y / i_clr`` over valid points with ``i_clr >= CLEAR_SKY_MIN``, per site-day."""
    f = table.frame
    use = table.valid & (f["i_clr"].to_numpy(dtype=np.float64) >= CLEAR_SKY_MIN)
    k = pd.Series(np.where(use, f["y"] / f["i_clr"].where(use, 1.0), np.nan))
    out = pd.DataFrame({"site_id": f["site_id"], "date": f["timestamp"].dt.date, "k": k})
    return out.groupby(["site_id", "date"], sort=False)["k"].mean().reset_index()


def sky_label(k_mean: float, clear=CLEAR_THRESHOLD, partly=PARTLY_THRESHOLD) -> str:
    if k_mean is None or not np.isfinite(k_mean):
        return "unknown"
    if k_mean >= clear:
        return "clear"
    if k_mean >= partly:
        return "partly_cloudy"
    return "cloudy"


def classify_sky(table: SeriesTable, day=None, site_id=None):
    """Sky label of one site-day, or a frame of labels for every site-day when ``day`` is None."""
    k = daily_clear_sky_index(table)
    k["label"] = [sky_label(v) for v in k["k"]]
    if day is None:
        return k
    day = pd.Timestamp(day).date()
    rows = k[(k["date"] == day) & ((k["site_id"] == site_id) if site_id is not None else True)]
    if rows.empty:
        raise KeyError(f"no data for day {day}")
    if len(rows) > 1:
        raise ValueError(f"day {day} exists for several sites; pass site_id")
    return rows["label"].iloc[0]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        ratios = (self.train, self.val, self.test)
        if min(ratios) < 0 or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")


class Split(NamedTuple):
    train: SeriesTable
    val: SeriesTable
    test: SeriesTable
    manifest: pd.DataFrame


SPLIT_NAMES = ("train", "val", "test")


def _allocate(n: int, ratios) -> list[int]:
    """Largest-remainder rounding of ``n * ratios``."""
    exact = [n * r for r in ratios]
    counts = [int(math.floor(x)) for x in exact]
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dayblocks(table: SeriesTable, spec: SplitSpec = SplitSpec()) -> Split:
    """Assign whole site-days to train/val/test, stratified by sky label.

    Each stratum is shuffled with ``spec.seed`` and cut by largest-remainder
    rounding of the ratios, so every split is within one day of its share.
    """
    labels = classify_sky(table)
    ratios = (spec.train, spec.val, spec.test)
    rng = np.random.default_rng(spec.seed)
    assignment = np.empty(len(labels), dtype=object)
    strata = [s for s in (*SKY_LABELS, "unknown") if (labels["label"] == s).any()]
    n_splits = sum(r > 0 for r in ratios)
    if len(labels) < len(strata) * n_splits:
        warnings.warn(
            f"{len(labels)} day blocks cannot fill {len(strata)} strata x {n_splits} splits; proportions waived",
            stacklevel=2,
        )
    for stratum in strata:
        idx = np.flatnonzero((labels["label"] == stratum).to_numpy())
        idx = idx[rng.permutation(idx.size)]
        bounds = np.cumsum([0, *_allocate(idx.size, ratios)])
        for name, a, b in zip(SPLIT_NAMES, bounds[:-1], bounds[1:]):
            assignment[idx[a:b]] = name
    manifest = labels.assign(split=assignment)[["site_id", "date", "label", "k", "split"]]
    manifest = manifest.sort_values(["site_id", "date"], kind="stable").reset_index(drop=True)
    parts = [table.select_days(manifest[manifest["split"] == name]) for name in SPLIT_NAMES]
    return Split(*parts, manifest)


REGIMES = {
    # mean and stationary spread of the clear-sky index
    "clear": (0.95, 0.03),
    "partly_cloudy": (0.55, 0.12),
    "cloudy": (0.25, 0.10),
}


@dataclass
class SynthConfig:
    sites: int = 1
    days: int = 30
    seed: int = 0
    regime_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    start: str = "2023-01-01"
    reversion: float = 0.25  # per 15-minute step
    peak: float = 1000.0
    seasonal_amplitude: float = 0.12

    def __post_init__(self):
        self.regime_mix = tuple(float(x) for x in self.regime_mix)
        if self.days < 1 or self.sites < 1:
            raise ValueError("days and sites must be >= 1")
        if len(self.regime_mix) != 3 or min(self.regime_mix) < 0 or sum(self.regime_mix) <= 0:
            raise ValueError("regime_mix needs three non-negative weights (clear, partly_cloudy, cloudy)")
        if not 0 < self.reversion <= 1:
            raise ValueError("reversion must lie in (0, 1]")


def clear_sky(hours, day_of_year, peak=1000.0, seasonal_amplitude=0.12):
    """Smooth diurnal bell, zero outside 06:00-18:30."""
    h = np.asarray(hours, dtype=np.float64)
    season = 1.0 + seasonal_amplitude * np.cos(2 * np.pi * (np.asarray(day_of_year) - 172) / 365.0)
    phase = np.clip((h - 6.0) / 12.5, 0.0, 1.0)
    bell = np.where((h > 6.0) & (h < 18.5), np.sin(np.pi * phase) ** 1.3, 0.0)
    return peak * season * bell


def synth_generate(cfg: SynthConfig) -> SeriesTable:
    mix = np.asarray(cfg.regime_mix) / np.sum(cfg.regime_mix)
    names = list(REGIMES)
    start = pd.Timestamp(cfg.start).normalize()
    stamps = pd.date_range(start, periods=cfg.days * POINTS_PER_DAY, freq=GRID)
    hours = _hours(pd.Series(stamps))
    doy = stamps.dayofyear.to_numpy()
    theta = cfg.reversion
    frames = []
    for site in range(cfg.sites):
        site_rng = np.random.default_rng([cfg.seed, site])
        scale = 1.0 + 0.03 * site
        clr = clear_sky(hours, doy, cfg.peak * scale, cfg.seasonal_amplitude)
        regimes = site_rng.choice(3, size=cfg.days, p=mix)
        k = np.empty(cfg.days * POINTS_PER_DAY)
        for d, reg in enumerate(regimes):
            mu, sd = REGIMES[names[reg]]
            step_sd = sd * math.sqrt(1 - (1 - theta) ** 2)
            x = mu + sd * site_rng.standard_normal()
            shocks = site_rng.standard_normal(POINTS_PER_DAY)
            for t in range(POINTS_PER_DAY):
                x = x + theta * (mu - x) + step_sd * shocks[t]
                k[d * POINTS_PER_DAY + t] = x
        k = np.clip(k, 0.0, 1.1)
        y = clr * k
        ci = np.clip(1.0 - k + 0.05 * site_rng.standard_normal(k.size), 0.0, 1.0)
        smooth = np.convolve(np.pad(k, 4, mode="edge"), np.ones(9) / 9, mode="valid")
        cams = np.clip(clr * (smooth + 0.05 * site_rng.standard_normal(k.size)), 0.0, None)
        frames.append(pd.DataFrame({
            "timestamp": stamps, "site_id": f"site{site:02d}", "y": y, "ci": ci, "i_clr": clr, "i_cams": cams,
        }))
    return SeriesTable(pd.concat(frames, ignore_index=True))
