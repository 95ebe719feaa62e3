# %% [markdown]
# # From raw series to training windows
#
# The pipeline is: generate (or load) a 15-minute table, patch short gaps,
# split whole site-days by sky type, fit the irradiance scale on the training
# days, then cut stride-one windows.

# %%
import tempfile
from pathlib import Path

import numpy as np

from pointpi.data import (
    Normalization,
    SeriesTable,
    SplitSpec,
    SynthConfig,
    build_windows,
    fill_gaps,
    load_csv,
    split_dayblocks,
    synth_generate,
    write_csv,
)

table = synth_generate(SynthConfig(sites=2, days=40, seed=3))
print(table.frame.head(30).tail(4).to_string(index=False))

# %% [markdown]
# Knock a hole into the series, round-trip through CSV and fill it. Runs of
# up to six hours are interpolated linearly. Longer ones stay missing and the
# windows that touch them are dropped.

# %%
frame = table.frame.copy()
frame.loc[40:43, "y"] = np.nan  # one hour
frame.loc[2000:2039, "y"] = np.nan  # ten hours
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "series.csv"
    write_csv(SeriesTable(frame), path)
    holed = load_csv(path)
filled = fill_gaps(holed)
print("missing before:", int((~holed.valid).sum()), " after:", int((~filled.valid).sum()))

# %% [markdown]
# Site-days are labelled clear, partly cloudy or cloudy by their mean
# clear-sky index, and each label is split 80/10/10 on its own.

# %%
split = split_dayblocks(filled, SplitSpec(seed=7))
print(split.manifest.groupby(["label", "split"]).size().unstack(fill_value=0))

# %% [markdown]
# The scale `R_Q` comes from training days only and divides every irradiance
# channel.

# %%
norm = Normalization.fit(split.train)
train = build_windows(split.train, lag_window=16, horizon=8, norm=norm)
test = build_windows(split.test, lag_window=16, horizon=8, norm=norm)
print(f"R_Q = {norm.r_q:.1f} W/m^2")
print(f"train windows {len(train)}, test windows {len(test)}")
print("lag", train.lag.shape, "future", train.future.shape, "target", train.target.shape)
