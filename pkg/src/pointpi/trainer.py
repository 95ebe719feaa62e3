"""Joint point and interval training with per-batch MGDA weighting.

Each epoch refreshes the barrier sharpness from hard coverage on the full
training set, walks shuffled minibatches taking an Adam step along the
min-norm combination of the two task gradients, then scores the validation
set for early stopping.

Batch-norm running statistics lag behind quickly shrinking feature scales when
an epoch has only a handful of batches, which makes inference-mode outputs
disagree with what was trained. By default every epoch therefore ends with a
full-batch pass over the training windows that stores their exact statistics
(weights untouched); the same pass supplies the coverage used for the next
barrier refresh.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import ParameterSet, Tape, Tensor
from .losses import BarrierState, LossConfig, adaptive_r, pi_loss_terms, pinball_loss, point_loss
from .mgda import assert_common_descent, combine, descent_tolerance, min_norm_weights
from .model import ForecastBatch, Model, ModelConfig, calibrate_batchnorm, init_params, predict

LOSS_KINDS = ("solarpointpi", "pinball")


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("Adam eps must be positive and weight_decay non-negative")


@dataclass
class TrainConfig:
    lr: float = 3e-3
    min_epoch: int = 10
    max_epoch: int = 60
    patience: int = 8
    batch_size: int = 4096
    warmup_fraction: float = 0.05
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    loss: str = "solarpointpi"
    loss_config: LossConfig = field(default_factory=LossConfig)
    bn_recalibrate: bool = True

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        if isinstance(self.loss_config, dict):
            self.loss_config = LossConfig(**self.loss_config)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 1 <= self.min_epoch <= self.max_epoch:
            raise ValueError(f"need 1 <= min_epoch <= max_epoch, got {self.min_epoch}, {self.max_epoch}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray, lr: float, cfg: AdamConfig = AdamConfig()):
    """One bias-corrected Adam update of ``theta`` in place along direction ``g``."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError(f"dimension mismatch: theta {theta.shape}, g {g.shape}, state {state.m.shape}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    state.m *= b1
    state.m += (1 - b1) * g
    state.v *= b2
    state.v += (1 - b2) * g * g
    m_hat = state.m / (1 - b1**state.step)
    v_hat = state.v / (1 - b2**state.step)
    if cfg.weight_decay:
        theta -= lr * cfg.weight_decay * theta
    theta -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state, theta


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warm-up to ``base_lr`` followed by cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("need 0 <= warmup_steps < total_steps")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class EarlyStopping:
    """Best-loss tracking with patience, checked after every epoch."""

    def __init__(self, min_epoch: int, max_epoch: int, patience: int):
        self.min_epoch, self.max_epoch, self.patience = min_epoch, max_epoch, patience
        self.best = math.inf
        self.best_epoch = 0
        self.counter = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, str | None]:
        """Returns ``(improved, stop_reason)``; the reason is None while training continues."""
        improved = loss < self.best
        if improved:
            self.best, self.best_epoch, self.counter = loss, epoch, 0
        else:
            self.counter += 1
        if epoch >= self.min_epoch and (self.counter >= self.patience or epoch >= self.max_epoch):
            return improved, "patience" if self.counter >= self.patience else "max_epoch"
        return improved, None


EPOCH_COLUMNS = [
    "epoch", "l_point_train", "l_pi_train", "l_point_val", "l_pi_val", "l_val", "best_l_val",
    "gamma1_mean", "gamma1_min", "gamma1_max", "picp_day_mean", "picp_night_mean", "r_day_mean", "r_night_mean",
    "grad_norm_1", "grad_norm_2", "inner_12", "lr", "descent_violations", "skipped_day", "skipped_night",
    "stop_reason",
]
BATCH_COLUMNS = [
    "epoch", "batch", "size", "l_point", "l_pi", "gamma1", "gamma2", "grad_norm_1", "grad_norm_2",
    "inner_12", "lr", "descent_ok", "skipped_day", "skipped_night",
]


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    batches: list[dict] = field(default_factory=list)
    r_day: list[np.ndarray] = field(default_factory=list)
    r_night: list[np.ndarray] = field(default_factory=list)
    picp_day: list[np.ndarray] = field(default_factory=list)
    picp_night: list[np.ndarray] = field(default_factory=list)
    best_epoch: int = 0
    best_l_val: float = math.inf
    stop_reason: str = ""
    descent_violations: int = 0

    @staticmethod
    def _write(path, columns, rows):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})

    def to_csv(self, path):
        self._write(path, EPOCH_COLUMNS, self.epochs)

    def batches_to_csv(self, path):
        self._write(path, BATCH_COLUMNS, self.batches)

    def r_to_csv(self, path):
        rows = []
        for e, (rd, rn, pd_, pn) in enumerate(zip(self.r_day, self.r_night, self.picp_day, self.picp_night), 1):
            for k in range(len(rd)):
                rows.append({"epoch": e, "step": k + 1, "picp_day": pd_[k], "picp_night": pn[k], "r_day": rd[k], "r_night": rn[k]})
        self._write(path, ["epoch", "step", "picp_day", "picp_night", "r_day", "r_night"], rows)


def _as_forecast(lower, point, upper) -> ForecastBatch:
    return ForecastBatch(Tensor(lower), Tensor(point), Tensor(upper))


def hard_regime_picp(y, lower, upper, threshold):
    """Counting coverage per step for targets above (day) and below (night) ``threshold``.

    A step with no samples in a regime reports NaN for it.
    """
    inside = (lower <= y) & (y <= upper)
    day, night = y > threshold, y < threshold
    with np.errstate(invalid="ignore", divide="ignore"):
        picp_day = (inside & day).sum(axis=0) / day.sum(axis=0)
        picp_night = (inside & night).sum(axis=0) / night.sum(axis=0)
    return picp_day, picp_night


def update_barrier(picp_day, picp_night, cfg: LossConfig) -> BarrierState:
    def r_of(p, picps):
        return np.array([cfg.r_cap if not np.isfinite(c) else adaptive_r(p, c, cfg.rho, cfg.r_cap) for c in picps])

    return BarrierState(r_of(cfg.p_day, picp_day), r_of(cfg.p_night, picp_night))


def task_losses(forecast, targets, barrier, cfg: TrainConfig):
    """``(L_point, L_interval, terms)``; ``terms`` is None for the pinball baseline."""
    lc = cfg.loss_config
    l1 = point_loss(forecast, targets, 1.0)
    if cfg.loss == "pinball":
        return l1, pinball_loss(forecast, targets, 1.0 - lc.p_day), None
    terms = pi_loss_terms(forecast, targets, barrier, lc)
    return l1, terms.per_step.mean(), terms


def validate(model_config: ModelConfig, params: ParameterSet, val_set, train_config: TrainConfig, barrier: BarrierState):
    """``(L_point, L_PI, L_val)`` on the whole set in inference mode with the given barrier."""
    if len(val_set) == 0:
        raise ValueError("validation set is empty")
    lower, point, upper = predict(model_config, params, val_set.lag, val_set.future)
    l1, l2, _ = task_losses(_as_forecast(lower, point, upper), val_set.target, barrier, train_config)
    l1, l2 = float(l1), float(l2)
    return l1, l2, l1 + l2


def _bind_flat(params: ParameterSet) -> np.ndarray:
    """Re-point every parameter array at a view of one flat vector, which is returned."""
    theta = params.flatten()
    i = 0
    for name, v in params.tensors.items():
        params.tensors[name] = theta[i : i + v.size].reshape(v.shape)
        i += v.size
    return theta


def train(model_config: ModelConfig, train_set, val_set, train_config: TrainConfig,
          params: ParameterSet | None = None, log=None, val_override=None):
    """Run the epoch loop and return ``(best_params, report, barrier_at_best, last_params)``.

    ``val_override(epoch, l_val) -> float`` replaces the monitored validation
    loss, which lets tests script early-stopping sequences.
    """
    cfg = train_config
    lc = cfg.loss_config
    if len(train_set) < 2:
        raise ValueError("training set needs at least 2 windows")
    if len(val_set) == 0:
        raise ValueError("validation set is empty")
    if train_set.horizon != model_config.horizon:
        raise ValueError(f"data horizon {train_set.horizon} differs from model horizon {model_config.horizon}")
    model = Model(model_config)
    params = init_params(model_config) if params is None else params.copy()
    theta = _bind_flat(params)
    names = params.names
    adam = AdamState.zeros(theta.size)

    n = len(train_set)
    bs = min(cfg.batch_size, n)
    n_batches = n // bs + (1 if n % bs >= 2 else 0)
    total_steps = cfg.max_epoch * n_batches
    warmup = int(round(cfg.warmup_fraction * total_steps))
    warmup = min(warmup, total_steps - 1)

    stopper = EarlyStopping(cfg.min_epoch, cfg.max_epoch, cfg.patience)
    report = TrainReport()
    best_params = params.copy()
    best_barrier = BarrierState.initial(model_config.horizon, lc.r_cap)
    step = 0

    def train_outputs():
        if cfg.bn_recalibrate:
            return calibrate_batchnorm(model_config, params, train_set.lag, train_set.future)
        return predict(model_config, params, train_set.lag, train_set.future)

    outputs = train_outputs()
    for epoch in range(1, cfg.max_epoch + 1):
        lower, point, upper = outputs
        pday, pnight = hard_regime_picp(train_set.target, lower, upper, lc.night_threshold)
        barrier = update_barrier(pday, pnight, lc)
        report.picp_day.append(pday)
        report.picp_night.append(pnight)
        report.r_day.append(barrier.r_day.copy())
        report.r_night.append(barrier.r_night.copy())

        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        rows = []
        for b in range(n_batches):
            idx = order[b * bs : (b + 1) * bs]
            step += 1
            lr = lr_at(step, total_steps, warmup, cfg.lr)
            with Tape() as tape:
                leaves = {k: tape.watch(params.tensors[k], k) for k in names}
                fc = model.forward(params, train_set.lag[idx], train_set.future[idx], mode="train", weights=leaves)
                l1, l2, terms = task_losses(fc, train_set.target[idx], barrier, cfg)
            v1, v2 = float(l1), float(l2)
            if not (math.isfinite(v1) and math.isfinite(v2)):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b + 1}: L_point={v1}, L_PI={v2}")
            wrt = [leaves[k] for k in names]
            g1 = np.concatenate([g.ravel() for g in tape.gradient(l1, wrt)])
            g2 = np.concatenate([g.ravel() for g in tape.gradient(l2, wrt)])
            if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2))):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {b + 1}")
            weights = min_norm_weights(g1, g2)
            g = combine(weights, g1, g2)
            ok = assert_common_descent(g, g1, g2, descent_tolerance(g1, g2))
            adam_step(adam, theta, g, lr, cfg.adam)
            skipped_day = skipped_night = 0
            if terms is not None:
                skipped_day = int(np.sum(~terms.coverage.day_defined))
                skipped_night = int(np.sum(~terms.coverage.night_defined))
            rows.append({
                "epoch": epoch, "batch": b + 1, "size": len(idx), "l_point": v1, "l_pi": v2,
                "gamma1": weights.gamma1, "gamma2": weights.gamma2,
                "grad_norm_1": float(np.linalg.norm(g1)), "grad_norm_2": float(np.linalg.norm(g2)),
                "inner_12": float(g1 @ g2), "lr": lr, "descent_ok": int(ok),
                "skipped_day": skipped_day, "skipped_night": skipped_night,
            })
        report.batches.extend(rows)
        violations = sum(1 - r["descent_ok"] for r in rows)
        report.descent_violations += violations

        outputs = train_outputs()
        l1v, l2v, lval = validate(model_config, params, val_set, cfg, barrier)
        if not math.isfinite(lval):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        monitored = val_override(epoch, lval) if val_override is not None else lval
        improved, reason = stopper.update(epoch, monitored)
        if improved:
            best_params = params.copy()
            best_barrier = barrier.copy()

        def mean(key):
            return float(np.mean([r[key] for r in rows]))

        gammas = [r["gamma1"] for r in rows]
        row = {
            "epoch": epoch, "l_point_train": mean("l_point"), "l_pi_train": mean("l_pi"),
            "l_point_val": l1v, "l_pi_val": l2v, "l_val": monitored, "best_l_val": stopper.best,
            "gamma1_mean": float(np.mean(gammas)), "gamma1_min": float(np.min(gammas)), "gamma1_max": float(np.max(gammas)),
            "picp_day_mean": float(np.nanmean(pday)) if np.isfinite(pday).any() else float("nan"),
            "picp_night_mean": float(np.nanmean(pnight)) if np.isfinite(pnight).any() else float("nan"),
            "r_day_mean": float(np.mean(barrier.r_day)), "r_night_mean": float(np.mean(barrier.r_night)),
            "grad_norm_1": mean("grad_norm_1"), "grad_norm_2": mean("grad_norm_2"), "inner_12": mean("inner_12"),
            "lr": rows[-1]["lr"], "descent_violations": violations,
            "skipped_day": sum(r["skipped_day"] for r in rows), "skipped_night": sum(r["skipped_night"] for r in rows),
            "stop_reason": reason or "",
        }
        report.epochs.append(row)
        if log is not None:
            log(row)
        if reason is not None:
            report.stop_reason = reason
            break

    report.best_epoch = stopper.best_epoch
    report.best_l_val = stopper.best
    return best_params, report, best_barrier, params.copy()


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
