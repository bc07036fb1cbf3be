"""Regularized training objective, schedules and the SGD loop."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import TOOL
from . import autodiff as ad
from . import config as cfgmod
from .autodiff import Tensor
from .datasets import Dataset, DatasetSpec
from .errors import ConfigError, DataError, DomainError, TrainingDiverged
from .regularizers import HammingAccumulator, RegWeights, ambient_loss, intrinsic_loss, sample_pair
from .relu_net import NetworkParams, forward, predict, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear function of the epoch, constant beyond its ends."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(e), float(v)) for e, v in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise DomainError("schedule has no breakpoints")
        epochs = [e for e, _ in pts]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise DomainError(f"schedule epochs must be strictly increasing: {epochs}")
        if not all(np.isfinite(v) for _, v in pts):
            raise DomainError("schedule values must be finite")

    @classmethod
    def constant(cls, value: float) -> Schedule:
        return cls(((0.0, value),))

    @classmethod
    def ramp(cls, start: float, factor: float, from_epoch: float, to_epoch: float) -> Schedule:
        return cls(((from_epoch, start), (to_epoch, start * factor)))

    @classmethod
    def parse(cls, text: str, key: str = "schedule") -> Schedule:
        """Parse ``"0:0,40:0.1,80:0.005,100:0"``; values may be fractions."""
        pts = []
        for item in text.split(","):
            if not item.strip():
                continue
            if ":" not in item:
                raise ConfigError(f"{key}: breakpoint {item!r} must be epoch:value")
            e, v = item.split(":", 1)
            pts.append((cfgmod.number(e, key), cfgmod.number(v, key)))
        try:
            return cls(tuple(pts))
        except DomainError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def format(self) -> str:
        return ",".join(f"{e:g}:{v!r}" for e, v in self.points)

    def __call__(self, epoch: float) -> float:
        return schedule_at(self, epoch)


def schedule_at(s: Schedule, epoch: float) -> float:
    if not s.points:
        raise DomainError("schedule has no breakpoints")
    es, vs = zip(*s.points)
    return float(np.interp(epoch, es, vs))


DEFAULT_LR = "0:0,40:0.1,80:0.005,100:0"
IMAGE_EPS = "10:2/255,35:8/255"


@dataclass(frozen=True)
class TrainConfig:
    dims: tuple[int, ...] = (2, 64, 64, 2)
    epochs: int = 100
    batch_size: int = 50
    seed: int = 0
    alpha: float = 8.0
    gamma_k: float = 5e-4
    momentum: float = 0.0
    checkpoint_every: int = 0
    lr: Schedule = field(default_factory=lambda: Schedule.parse(DEFAULT_LR))
    eps: Schedule = field(default_factory=lambda: Schedule.parse(IMAGE_EPS))
    gamma_i: Schedule = field(default_factory=lambda: Schedule.ramp(0.8, 10.0, 20, 80))
    gamma_h: Schedule = field(default_factory=lambda: Schedule.ramp(2400.0, 10.0, 20, 80))
    dataset: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.gamma_k < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("gamma_k must be >= 0 and momentum in [0, 1)")
        for name in ("lr", "eps", "gamma_i", "gamma_h"):
            if min(v for _, v in getattr(self, name).points) < 0:
                raise ConfigError(f"schedule {name} has negative values")
        if len(self.dims) < 2:
            raise ConfigError(f"model needs at least two layer dims, got {self.dims}")

    def weights_at(self, epoch: float) -> RegWeights:
        return RegWeights(self.gamma_k, self.gamma_i(epoch), self.gamma_h(epoch), self.alpha)

    @property
    def regularized(self) -> bool:
        return any(v > 0 for _, v in self.gamma_i.points + self.gamma_h.points)

    def without_manifold_terms(self) -> TrainConfig:
        """Same config with the intrinsic and Hamming weights set to zero."""
        return replace(self, gamma_i=Schedule.constant(0.0), gamma_h=Schedule.constant(0.0))

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> TrainConfig:
        m = dict(mapping)
        d = cls()
        kw: dict = {}
        ints = {"epochs": "epochs", "batch_size": "batch_size", "seed": "seed", "checkpoint_every": "checkpoint_every"}
        for key, name in ints.items():
            if key in m:
                kw[name] = cfgmod.integer(m.pop(key), key)
        for key in ("alpha", "gamma_k", "momentum"):
            if key in m:
                kw[key] = cfgmod.number(m.pop(key), key)
        if "model" in m:
            kw["dims"] = tuple(cfgmod.int_list(m.pop("model"), "model"))
        for name in ("lr", "eps"):
            key = f"schedule.{name}"
            if key in m:
                kw[name] = Schedule.parse(m.pop(key), key)
        for name in ("gamma_i", "gamma_h"):
            ramp_keys = [k for k in (f"{name}.start", f"{name}.factor", f"{name}.ramp") if k in m]
            key = f"schedule.{name}"
            if key in m and ramp_keys:
                raise ConfigError(f"{key} conflicts with {ramp_keys[0]}; give one form only")
            if key in m:
                kw[name] = Schedule.parse(m.pop(key), key)
            elif ramp_keys:
                default = getattr(d, name)
                start = cfgmod.number(m.pop(f"{name}.start"), f"{name}.start") if f"{name}.start" in m else default.points[0][1]
                factor = cfgmod.number(m.pop(f"{name}.factor"), f"{name}.factor") if f"{name}.factor" in m else 10.0
                lo, hi = 20.0, 80.0
                if f"{name}.ramp" in m:
                    bounds = cfgmod.number_list(m.pop(f"{name}.ramp").replace(":", ","), f"{name}.ramp")
                    if len(bounds) != 2:
                        raise ConfigError(f"{name}.ramp must be from:to")
                    lo, hi = bounds
                kw[name] = Schedule.ramp(start, factor, lo, hi)
        seed = kw.get("seed", d.seed)
        kw["dataset"] = DatasetSpec.from_mapping(m, default_seed=seed)
        cfgmod.ensure_consumed(m)
        return cls(**kw)

    def to_mapping(self) -> dict[str, str]:
        out = {
            "model": ",".join(str(v) for v in self.dims),
            "epochs": str(self.epochs),
            "batch_size": str(self.batch_size),
            "seed": str(self.seed),
            "alpha": cfgmod.fmt_number(self.alpha),
            "gamma_k": cfgmod.fmt_number(self.gamma_k),
            "momentum": cfgmod.fmt_number(self.momentum),
            "checkpoint_every": str(self.checkpoint_every),
            "schedule.lr": self.lr.format(),
            "schedule.eps": self.eps.format(),
            "schedule.gamma_i": self.gamma_i.format(),
            "schedule.gamma_h": self.gamma_h.format(),
        }
        out.update(self.dataset.to_mapping())
        return out

    def hash(self) -> str:
        return cfgmod.config_hash(self.to_mapping())


@dataclass
class Objective:
    value: Tensor
    terms: dict[str, float | None]


def objective(params: NetworkParams, X, y, weights: RegWeights, eps: float,
              seed: int | np.random.Generator = 0) -> Objective:
    """Cross-entropy plus weight decay, intrinsic and Hamming penalties.

    The clean batch and both corner batches go through the network as one
    stacked forward pass. The manifold terms are skipped entirely when both
    of their weights are zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    B = X.shape[0]
    if B == 0:
        raise DataError("empty batch")
    classes = params.dims[-1]
    if y.shape != (B,) or y.min() < 0 or y.max() >= classes:
        raise DataError(f"labels must be {B} integers in [0, {classes})")

    with_manifold = weights.gamma_i > 0 or weights.gamma_h > 0
    if with_manifold:
        pair = sample_pair(X, eps, seed)
        stacked = np.concatenate([X, pair.x_plus, pair.x_minus], axis=0)
        acc = HammingAccumulator(weights.alpha, len(params.hidden_dims))
        hook = lambda i, z: acc.add(ad.take(z, B, 2 * B), ad.take(z, 2 * B, 3 * B))  # noqa: E731
        out = forward(params, Tensor(stacked), on_hidden=hook, keep=False).output
        clean = ad.take(out, 0, B)
        intr = intrinsic_loss(ad.take(out, B, 2 * B), ad.take(out, 2 * B, 3 * B))
        ham = acc.value()
    else:
        clean = forward(params, Tensor(X), keep=False).output
        intr = ham = None

    ce = ad.softmax_cross_entropy(clean, y)
    amb = ambient_loss(params)
    total = ad.add(ce, ad.scale(amb, weights.gamma_k))
    if with_manifold:
        total = ad.add(total, ad.add(ad.scale(intr, weights.gamma_i), ad.scale(ham, weights.gamma_h)))
    terms = {
        "ce": ce.item(),
        "ambient": amb.item(),
        "intrinsic": None if intr is None else intr.item(),
        "hamming": None if ham is None else ham.item(),
        "objective": total.item(),
    }
    return Objective(total, terms)


def total_objective(params: NetworkParams, batch, cfg: TrainConfig, epoch: float,
                    seed: int | np.random.Generator = 0) -> Objective:
    X, y = batch
    return objective(params, X, y, cfg.weights_at(epoch), cfg.eps(epoch), seed)


def measure_terms(params: NetworkParams, X, eps: float, alpha: float, seed: int = 0) -> dict[str, float]:
    """Intrinsic and Hamming penalties on fixed-seed pairs, without training."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    frozen = NetworkParams.from_arrays([A.data for A in params.weights], [b.data for b in params.biases], requires_grad=False)
    pair = sample_pair(X, eps, seed)
    B = X.shape[0]
    acc = HammingAccumulator(alpha, len(frozen.hidden_dims))
    stacked = Tensor(np.concatenate([pair.x_plus, pair.x_minus]))
    out = forward(frozen, stacked, on_hidden=lambda i, z: acc.add(ad.take(z, 0, B), ad.take(z, B, 2 * B)), keep=False).output
    intr = intrinsic_loss(ad.take(out, 0, B), ad.take(out, B, 2 * B))
    return {"intrinsic": intr.item(), "hamming": acc.value().item()}


def accuracy(params: NetworkParams, X, y) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean(predict(params, X) == np.asarray(y)))


@dataclass
class TrainResult:
    params: NetworkParams
    metrics: list[dict]
    init: NetworkParams


def _streams(seed: int):
    init, shuffle, pairs = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(shuffle), np.random.default_rng(pairs)


def sgd_step(params: NetworkParams, grads: Sequence[np.ndarray], lr: float,
             momentum: float = 0.0, buffers: list[np.ndarray] | None = None) -> None:
    for i, (t, g) in enumerate(zip(params.tensors(), grads)):
        if momentum and buffers is not None:
            buffers[i] = momentum * buffers[i] + g
            g = buffers[i]
        t.data = t.data - lr * g


def train(cfg: TrainConfig, data: Dataset, out_dir: str | Path | None = None,
          init: NetworkParams | None = None) -> TrainResult:
    """Plain (optionally momentum) SGD on the regularized objective.

    Schedules are evaluated at the fractional epoch of every step. With
    ``out_dir`` the final checkpoint, periodic checkpoints and a JSON-lines
    metrics log are written there.
    """
    if data.input_dim != cfg.dims[0]:
        raise DataError(f"dataset has {data.input_dim} features, model expects {cfg.dims[0]}")
    if data.n_classes > cfg.dims[-1]:
        raise DataError(f"dataset has {data.n_classes} classes, model outputs {cfg.dims[-1]}")
    init_rng, shuffle_rng, pair_rng = _streams(cfg.seed)
    params = init.copy() if init is not None else NetworkParams.init_he(cfg.dims, init_rng)
    start = params.copy()
    out = Path(out_dir) if out_dir is not None else None
    header = {"tool": TOOL, "config_hash": cfg.hash()}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text(json.dumps(header) + "\n")
    ckpt_extra = f"tool={TOOL.replace(' ', '-')} config={cfg.hash()}"

    X, Y = data.x_train, data.y_train
    n = len(X)
    n_batches = max(1, -(-n // cfg.batch_size))
    buffers = [np.zeros_like(a) for a in params.arrays()] if cfg.momentum else None
    tensors = params.tensors()
    metrics: list[dict] = []
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        sums: dict[str, float] = {}
        last_terms = None
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            t = epoch + b / n_batches
            obj = objective(params, X[idx], Y[idx], cfg.weights_at(t), cfg.eps(t), pair_rng)
            if not np.isfinite(obj.value.item()):
                raise TrainingDiverged(epoch, b, last_terms)
            last_terms = obj.terms
            for k, v in obj.terms.items():
                if v is not None:
                    sums[k] = sums.get(k, 0.0) + v
            grads = ad.grad(obj.value, tensors)
            sgd_step(params, grads, cfg.lr(t), cfg.momentum, buffers)
        w = cfg.weights_at(epoch)
        rec = {
            "epoch": epoch,
            "lr": cfg.lr(epoch),
            "eps": cfg.eps(epoch),
            "gamma_i": w.gamma_i,
            "gamma_h": w.gamma_h,
        }
        for k in ("ce", "ambient", "intrinsic", "hamming", "objective"):
            rec[k] = sums[k] / n_batches if k in sums else None
        rec["train_accuracy"] = accuracy(params, X, Y)
        rec["test_accuracy"] = accuracy(params, data.x_test, data.y_test)
        metrics.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if out is not None:
            with (out / "metrics.jsonl").open("a") as fh:
                fh.write(json.dumps(rec) + "\n")
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(params, out / f"model.epoch{epoch + 1:04d}.ckpt", ckpt_extra)
    if out is not None:
        save_checkpoint(params, out / "model.ckpt", ckpt_extra)
    return TrainResult(params, metrics, start)
