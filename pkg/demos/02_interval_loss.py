# %% [markdown]
# # The interval loss
#
# The interval objective adds two pieces for each forecast step:
# a coverage penalty built on an extended log-barrier, and a width penalty that
# leans hardest on the widest intervals.

# %%
import numpy as np

from pointpi.losses import (
    BarrierState,
    LossConfig,
    adaptive_r,
    day_night_picp,
    extended_log_barrier,
    pi_loss_terms,
    sumk_width,
)
from pointpi.model import ForecastBatch

# %% [markdown]
# ## Extended log-barrier
#
# For `z < 0` (coverage above target) the penalty is `-log(-z)/r`. Past the
# knot at `z = -1/r^2` it continues along its tangent, so the loss stays finite
# when the target is missed. Larger `r` makes the wall steeper.

# %%
z = np.array([-0.5, -0.1, -0.01, 0.0, 0.05, 0.2])
for r in (1.0, 10.0, 100.0):
    print(f"r={r:6.1f}", np.round(extended_log_barrier(z, r).data, 4))

# %% [markdown]
# `r` is not fixed. It grows as coverage approaches its target, capped at `r_cap`.

# %%
for picp in (0.2, 0.5, 0.7, 0.8, 0.85):
    print(f"PICP {picp:.2f} -> r = {adaptive_r(0.9, picp, rho=10.0, r_cap=100.0):.1f}")

# %% [markdown]
# ## Sum-k width penalty
#
# The top `k` widths get full weight and the rest get `lam`. With `lam < 1`,
# one very wide interval costs more than several moderate ones.

# %%
even = np.full(10, 0.3)
spiky = np.array([1.2] + [0.2] * 9)
print("mean widths      ", even.mean(), spiky.mean())
print("sum-k (k=3, 0.8) ", float(sumk_width(even, 3, 0.8)), float(sumk_width(spiky, 3, 0.8)))

# %% [markdown]
# ## Day and night coverage
#
# Coverage is smoothed with `tanh` so that it has a gradient. Day and night
# samples are scored separately with their own targets (0.90 and 0.15).

# %%
rng = np.random.default_rng(1)
n, h = 400, 2
hours = rng.uniform(0, 24, size=(n, 1)).repeat(h, axis=1)
y = np.where((hours > 6) & (hours < 18), rng.uniform(0.1, 1.0, size=(n, h)), 0.0)
point = y + rng.normal(0, 0.05, size=(n, h))
half = np.full((n, h), 0.08)
fc = ForecastBatch(point - half, point, point + half)

cov = day_night_picp(y, fc.lower, fc.upper, s=50.0, threshold=0.001)
print("smooth day PICP  ", np.round(cov.picp_day.data, 3))
print("smooth night PICP", np.round(cov.picp_night.data, 3))

cfg = LossConfig()
terms = pi_loss_terms(fc, y, BarrierState.initial(h, cfg.r_cap), cfg)
print("per-step interval loss", np.round(terms.per_step.data, 3))
