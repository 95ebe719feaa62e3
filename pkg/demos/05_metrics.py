# %% [markdown]
# # Scoring point and interval forecasts
#
# Interval quality is summarised by coverage (PICP) and by widths normalised
# by the 5-95% interquantile range `R_Q` of the observations. PINALW looks only
# at the widest intervals and flags over-conservative forecasts that a mean
# width would hide.

# %%
import numpy as np

from pointpi.metrics import evaluate, interquantile_range, picp_hard, pinalw, pinaw, winkler

rng = np.random.default_rng(7)
n, h = 2000, 3
hours = rng.uniform(0, 24, size=(n, 1)).repeat(h, axis=1)
day = (hours >= 6) & (hours < 18)
y = np.where(day, rng.gamma(4.0, 120.0, size=(n, h)), 0.0)
point = y + rng.normal(0, 40, size=(n, h))
r_q = interquantile_range(y)
print(f"R_Q = {r_q:.1f}")

# %% [markdown]
# Two interval forecasts with the same mean half-width of 70. The second puts
# most of its width in a few very wide intervals.

# %%
steady = np.full((n, h), 70.0)
bursty = np.where(rng.uniform(size=(n, h)) < 0.1, 430.0, 30.0)
for name, half in (("steady", steady), ("bursty", bursty)):
    lo, hi = point - half, point + half
    print(f"{name:7s} PICP {picp_hard(y, lo, hi):.3f}  PINAW {pinaw(lo, hi, r_q):.3f}  "
          f"PINALW(0.5) {pinalw(lo, hi, 0.5, r_q):.3f}  Winkler {winkler(y, lo, hi, 0.9, r_q):.3f}")

# %% [markdown]
# `evaluate` gives the per-step table. By default only daytime hours count,
# because night intervals around an exact zero are trivially right.

# %%
report = evaluate(y, point - steady, point, point + steady, r_q, hours=hours, p=0.9)
print(report.to_table())
