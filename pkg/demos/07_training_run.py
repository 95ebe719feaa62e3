# %% [markdown]
# # A short joint training run
#
# A small synthetic problem, trained twice on the same split: once with the
# barrier interval loss and once with a two-quantile pinball loss. Both runs
# use the same MGDA weighting between the point task and the interval task.
# Takes a minute or two on one CPU.

# %%
import time

from pointpi.data import Normalization, SplitSpec, SynthConfig, build_windows, split_dayblocks, synth_generate
from pointpi.metrics import evaluate
from pointpi.model import ModelConfig, predict
from pointpi.trainer import TrainConfig, train

table = synth_generate(SynthConfig(sites=1, days=60, seed=11))
split = split_dayblocks(table, SplitSpec(seed=7))
norm = Normalization.fit(split.train)
train_set, val_set, test_set = (build_windows(t, 16, 4, norm) for t in split[:3])
model_cfg = ModelConfig(lag_window=16, horizon=4, encoder_hidden=16, submodel_widths=[32, 32], seed=0)
print(f"{len(train_set)} training windows, {model_cfg.parameter_count()} parameters")


# %% [markdown]
# The log callback receives each epoch row of the report. `gamma1` is the
# batch-averaged weight on the point loss. `picp_day_mean` is the hard daytime
# coverage on the training set after the epoch.

# %%
def log(row):
    print(f"  epoch {row['epoch']:2d}  L_val {row['l_val']:8.4f}  gamma1 {row['gamma1_mean']:.2f}  "
          f"train day PICP {row['picp_day_mean']:.3f}")


results = {}
for loss in ("solarpointpi", "pinball"):
    print(loss)
    t0 = time.time()
    cfg = TrainConfig(lr=3e-3, batch_size=1024, min_epoch=6, max_epoch=12, patience=3, loss=loss)
    best, report, _, _ = train(model_cfg, train_set, val_set, cfg, log=log)
    print(f"  best epoch {report.best_epoch}, stopped by {report.stop_reason}, "
          f"{report.descent_violations} descent violations, {time.time() - t0:.0f} s")
    results[loss] = best

# %% [markdown]
# Scores on the held-out days, in W/m^2, daytime only.

# %%
for loss, params in results.items():
    lower, point, upper = predict(model_cfg, params, test_set.lag, test_set.future)
    r = norm.r_q
    m = evaluate(test_set.target * r, lower * r, point * r, upper * r, r, hours=test_set.hours, p=0.9)
    print(loss)
    print(m.to_table())
