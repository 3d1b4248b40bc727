"""Fitting the reflectance net to receive-power measurements.

The loss is mean squared error over dBm values, so weak receivers are
weighted equally with strong ones. Optimization is Adam with decoupled
weight decay under a cosine-annealed learning rate that warm-restarts
every t_max iterations by default. Everything is deterministic given
the config seed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .reflectance import (
    ReflectanceNet,
    forward_batch,
    net_backward,
    net_init,
    save_checkpoint,
)
from .renderer import PaddedBatch, pad, receive_power, receive_power_backward
from .scene import Scene
from .tracer import PathSet

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 1e-3
    weight_decay: float = 5e-5
    t_max: int = 10000
    eta_min: float = 1e-6
    max_iterations: int = 110000
    batch_size: Optional[int] = None  # RX nodes per step; None = all
    seed: int = 0
    checkpoint_interval: int = 1000
    eval_interval: int = 500
    cosine_restarts: bool = True
    val_fraction: float = 0.1
    train_fraction: float = 0.8
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("lr_init", "weight_decay", "t_max", "eta_min", "max_iterations",
                     "checkpoint_interval", "eval_interval"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.eta_min >= self.lr_init:
            raise ValueError("eta_min must be < lr_init")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
        return cls.from_dict(data)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Measurement:
    rx_id: int
    p_rx_dbm: float


@dataclass(frozen=True)
class Dataset:
    """Measurements plus a disjoint, exhaustive train/test split."""

    measurements: tuple[Measurement, ...]
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]

    def __post_init__(self):
        all_ids = {m.rx_id for m in self.measurements}
        tr, te = set(self.train_ids), set(self.test_ids)
        if tr & te:
            raise ValueError("train/test splits overlap")
        if tr | te != all_ids:
            raise ValueError("train/test splits must cover every measurement")

    @classmethod
    def split(cls, measurements, train_fraction: float = 0.8, seed: int = 0) -> "Dataset":
        """Deterministic shuffled split; id tuples are emitted sorted."""
        ms = tuple(measurements)
        rng = np.random.default_rng([seed, 0xD5])
        ids = np.array([m.rx_id for m in ms])
        perm = rng.permutation(len(ids))
        n_train = int(round(train_fraction * len(ids)))
        train = np.sort(ids[perm[:n_train]])
        test = np.sort(ids[perm[n_train:]])
        return cls(ms, tuple(int(i) for i in train), tuple(int(i) for i in test))

    def dbm_by_id(self) -> dict[int, float]:
        return {m.rx_id: m.p_rx_dbm for m in self.measurements}


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rx_id", "P_rx_dBm"])
        for m in dataset.measurements:
            w.writerow([m.rx_id, repr(m.p_rx_dbm)])


def load_measurements(path) -> tuple[Measurement, ...]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["rx_id", "P_rx_dBm"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(Measurement(rx_id=int(row[0]), p_rx_dbm=float(row[1])))
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}: line {lineno}: {e}") from None
    return tuple(out)


def loss(pred_dbm: np.ndarray, true_dbm: np.ndarray) -> float:
    """Mean squared dB error over non-sentinel entries."""
    pred_dbm = np.asarray(pred_dbm, dtype=float)
    true_dbm = np.asarray(true_dbm, dtype=float)
    if pred_dbm.shape != true_dbm.shape:
        raise ValueError("prediction and truth must have equal length")
    ok = np.isfinite(pred_dbm) & np.isfinite(true_dbm)
    if not ok.any():
        raise ValueError("no finite entries to compute a loss over")
    d = pred_dbm[ok] - true_dbm[ok]
    return float(np.mean(d * d))


def lr_schedule(t: int, config: TrainConfig) -> float:
    """Cosine annealing from lr_init to eta_min; warm restarts every t_max.

    The cycle position is end-inclusive: multiples of t_max (t > 0) map
    to the floor of the schedule, and the next iteration restarts.
    """
    if t < 0:
        raise ValueError("iteration must be >= 0")
    if config.cosine_restarts:
        period = config.t_max
        pos = 0 if t == 0 else ((t - 1) % period) + 1
    else:
        period = config.max_iterations
        pos = min(t, period)
    frac = pos / period
    return config.eta_min + 0.5 * (config.lr_init - config.eta_min) * (1.0 + np.cos(np.pi * frac))


class AdamState:
    def __init__(self, params: list[np.ndarray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One in-place Adam update with decoupled weight decay."""
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"param {i}: shape {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient at parameter {i}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            p -= (lr * weight_decay) * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainResult:
    net: ReflectanceNet              # best-on-validation parameters
    final_net: ReflectanceNet
    curve: list[tuple[int, float, float, float]]  # (iteration, lr, train, val)
    best_iteration: int
    best_val_loss: float
    aborted: bool = False


def _render_dbm(net: ReflectanceNet, batch: PaddedBatch):
    amp, phase = forward_batch(net, batch.real_angles, batch.real_surface_ids)
    return receive_power(batch, amp.astype(float), phase.astype(float))


def save_loss_curve(curve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lr", "train_loss", "val_loss"])
        for it, lr, tr, va in curve:
            w.writerow([it, repr(lr), repr(tr), repr(va)])


def train(
    scene: Scene,
    pathset: PathSet,
    dataset: Dataset,
    config: TrainConfig,
    out_dir: Optional[str] = None,
) -> TrainResult:
    """Full optimization loop; returns the best-on-validation checkpoint.

    Validation RX are carved deterministically from the training split;
    the test split is never touched here.
    """
    batch_all = pad(pathset, scene.tx_nodes, scene.carrier_wavelength_m)
    dtype = np.float32 if config.dtype == "float32" else np.float64
    net = net_init(scene.surface_count, config.seed, dtype=dtype)

    dbm = dataset.dbm_by_id()
    missing = [int(r) for r in batch_all.rx_ids if int(r) not in dbm]
    if missing:
        raise TrainError(f"measurements missing for rx ids {missing[:5]}")
    target_all = np.array([dbm[int(r)] for r in batch_all.rx_ids])
    row_of = {int(r): i for i, r in enumerate(batch_all.rx_ids)}

    train_ids = list(dataset.train_ids)
    val_rng = np.random.default_rng([config.seed, 0x7A])
    perm = val_rng.permutation(len(train_ids))
    n_val = int(round(config.val_fraction * len(train_ids)))
    val_ids = sorted(train_ids[i] for i in perm[:n_val])
    fit_ids = sorted(train_ids[i] for i in perm[n_val:])
    if not fit_ids:
        raise TrainError("training split is empty after validation carve")

    fit_rows = np.array([row_of[i] for i in fit_ids])
    val_rows = np.array([row_of[i] for i in val_ids])
    fit_batch = batch_all.subset(fit_rows)
    val_batch = batch_all.subset(val_rows) if len(val_rows) else None
    fit_target = target_all[fit_rows]
    val_target = target_all[val_rows] if len(val_rows) else None

    full_step = config.batch_size is None or config.batch_size >= len(fit_rows)
    sampler = np.random.default_rng([config.seed, 0x5B])

    state = AdamState(net.params())
    curve: list[tuple[int, float, float, float]] = []
    best_net = net.copy()
    best_iter = 0
    best_val = np.inf
    aborted = False

    def evaluate(it: int, lr: float) -> float:
        train_loss = loss(_render_dbm(net, fit_batch).p_dbm, fit_target)
        if val_batch is not None:
            val_loss = loss(_render_dbm(net, val_batch).p_dbm, val_target)
        else:
            val_loss = train_loss
        curve.append((it, lr, train_loss, val_loss))
        return val_loss

    def consider_best(it: int, val_loss: float):
        nonlocal best_net, best_iter, best_val
        if val_loss < best_val:
            best_val = val_loss
            best_iter = it
            best_net = net.copy()
            best_net.iteration = it

    for t in range(config.max_iterations):
        lr = lr_schedule(t, config)
        if full_step:
            sub, sub_target = fit_batch, fit_target
        else:
            rows = np.sort(sampler.choice(len(fit_rows), size=config.batch_size, replace=False))
            sub = fit_batch.subset(rows)
            sub_target = fit_target[rows]

        amp, phase, cache = forward_batch(
            net, sub.real_angles, sub.real_surface_ids, want_cache=True
        )
        result = receive_power(sub, amp.astype(float), phase.astype(float))
        ok = np.isfinite(result.p_dbm) & np.isfinite(sub_target)
        n_eff = int(ok.sum())
        if n_eff == 0:
            raise TrainError(f"iteration {t}: every receiver in the step is sentinel")
        resid = np.where(ok, result.p_dbm - sub_target, 0.0)
        step_loss = float(np.sum(resid * resid) / n_eff)
        if not np.isfinite(step_loss):
            aborted = True
            break
        d_dbm = 2.0 * resid / n_eff
        d_amp, d_phase = receive_power_backward(sub, result, d_dbm)
        grads = net_backward(net, cache, d_amp.astype(dtype), d_phase.astype(dtype))
        adam_step(net.params(), grads, state, lr, config.weight_decay)
        net.iteration = t + 1

        last = t == config.max_iterations - 1
        if t % config.eval_interval == 0 or last:
            consider_best(t + 1, evaluate(t + 1, lr))
        if out_dir is not None and config.checkpoint_interval and (
            (t + 1) % config.checkpoint_interval == 0 or last
        ):
            write_checkpoint_atomic(net, os.path.join(out_dir, "checkpoint.npz"))

    if aborted and not curve:
        evaluate(0, lr_schedule(0, config))
    return TrainResult(
        net=best_net,
        final_net=net,
        curve=curve,
        best_iteration=best_iter,
        best_val_loss=float(best_val),
        aborted=aborted,
    )


def write_checkpoint_atomic(net: ReflectanceNet, path: str) -> None:
    tmp = path + ".tmp"
    save_checkpoint(net, tmp)
    os.replace(tmp, path)
