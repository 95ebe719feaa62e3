# %% [markdown]
# # The command-line workflow
#
# The `pointpi` command wraps the library: `synth` writes a CSV, `train`
# fits and checkpoints a model, `eval` scores it, `predict` writes forecasts
# and `report` draws SVG panels. This script drives the same entry point from
# Python with a deliberately tiny configuration.

# %%
import tempfile
from pathlib import Path

import yaml

from pointpi.cli import main

work = Path(tempfile.mkdtemp(prefix="pointpi-demo-"))
config = {
    "model": {"lag_window": 16, "horizon": 4, "encoder_hidden": 12, "submodel_widths": [24, 24]},
    "train": {"lr": 0.003, "batch_size": 1024, "min_epoch": 6, "max_epoch": 10, "patience": 3},
    "split": {"seed": 7},
}
(work / "run.yaml").write_text(yaml.safe_dump(config))


def run(*argv):
    print("$ pointpi", " ".join(argv))
    code = main(list(argv))
    print(f"(exit {code})\n")


# %%
run("synth", "--out", str(work / "series.csv"), "--days", "40", "--sites", "1", "--seed", "5")
run("train", "--config", str(work / "run.yaml"), "--data", str(work / "series.csv"),
    "--out-dir", str(work / "run"), "--quiet")
print(sorted(p.name for p in (work / "run").iterdir()))

# %% [markdown]
# Evaluation defaults to the test split and daytime hours.

# %%
run("eval", "--checkpoint", str(work / "run" / "best.npz"), "--out", str(work / "test_metrics.csv"))
run("predict", "--checkpoint", str(work / "run" / "best.npz"), "--out", str(work / "forecast.csv"))
print((work / "forecast.csv").read_text().splitlines()[:3])

# %%
run("report", "--eval-csv", str(work / "test_metrics.csv"), "--train-report", str(work / "run" / "report.csv"),
    "--predictions", str(work / "forecast.csv"), "--out-dir", str(work / "figures"))
print(sorted(p.name for p in (work / "figures").iterdir()))
print("outputs in", work)
