"""l-inf PGD and attack-based stability / robustness evaluation.

A classifier is eps-stable at x when its prediction is constant on the
l-inf ball of radius eps around x, and eps-robust when it is additionally
correct at x. Stability is estimated by attacking the model's own
prediction, robustness by attacking the true label; both are upper bounds
on the true rates since the attack may miss adversarial points.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import TOOL
from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError
from .relu_net import NetworkParams, forward, logits

STABILITY_COLUMN = "PGD-stability (upper bound)"


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    steps: int = 20
    step_size: float | None = None
    restarts: int = 10
    clip: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise DomainError("steps and restarts must be >= 1")
        if self.eps < 0:
            raise DomainError(f"eps must be >= 0, got {self.eps}")
        if self.step_size is not None and not self.step_size > 0:
            raise DomainError(f"step size must be positive, got {self.step_size}")

    @property
    def step(self) -> float:
        """Explicit step size, else eps / 4 (2/255 at eps = 8/255)."""
        return self.step_size if self.step_size is not None else self.eps / 4.0


def _frozen(params: NetworkParams) -> NetworkParams:
    return NetworkParams.from_arrays(
        [A.data for A in params.weights], [b.data for b in params.biases], requires_grad=False
    )


def per_sample_xent(z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return lse - shifted[np.arange(len(z)), labels]


def input_gradient(params: NetworkParams, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the summed cross-entropy w.r.t. each input row."""
    x = Tensor(X, requires_grad=True)
    loss = ad.softmax_cross_entropy(forward(params, x, keep=False).output, labels)
    (g,) = ad.grad(loss, [x])
    return g * len(X)


def pgd_step(params: NetworkParams, X, labels, step: float) -> np.ndarray:
    """One unprojected signed-gradient ascent step on the cross-entropy."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X + step * np.sign(input_gradient(_frozen(params), X, np.atleast_1d(labels)))


def _project(x, center, eps, clip):
    # ball first, then range; for a center inside the range this is the
    # projection onto their intersection, for one outside it clips the center
    x = np.clip(x, center - eps, center + eps)
    return x if clip is None else np.clip(x, clip[0], clip[1])


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: np.ndarray
    restart_success: np.ndarray
    loss: np.ndarray


def pgd_batch(params: NetworkParams, X, labels, cfg: AttackConfig) -> AttackResult:
    """PGD on every row of ``X`` at once (rows are attacked independently).

    Restart ``r`` draws its start from ``default_rng([seed, r])``, so the
    first ``r`` restarts are shared between runs with different restart
    counts. A row counts as broken when any restart ends misclassified; the
    returned candidate is the highest-loss misclassified end point if there
    is one, else the highest-loss end point.
    """
    net = _frozen(params)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = len(X)
    best = _project(X, X, cfg.eps, cfg.clip)
    best_broken = np.zeros(n, dtype=bool)
    restart_success = np.zeros((cfg.restarts, n), dtype=bool)
    best_loss = np.full(n, -np.inf)
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        x = _project(X + rng.uniform(-cfg.eps, cfg.eps, X.shape), X, cfg.eps, cfg.clip)
        if cfg.eps > 0:
            for _ in range(cfg.steps):
                x = _project(x + cfg.step * np.sign(input_gradient(net, x, labels)), X, cfg.eps, cfg.clip)
        z = logits(net, x)
        loss = per_sample_xent(z, labels)
        broken = np.argmax(z, axis=1) != labels
        restart_success[r] = broken
        # misclassified end points outrank correctly classified ones, then loss
        better = (broken & ~best_broken) | ((broken == best_broken) & (loss > best_loss))
        best[better] = x[better]
        best_broken[better] = broken[better]
        best_loss[better] = loss[better]
    return AttackResult(best, restart_success.any(axis=0), restart_success, best_loss)


def pgd_attack(params: NetworkParams, x, y: int, cfg: AttackConfig) -> np.ndarray:
    """Adversarial candidate for one input ``x`` with label ``y``."""
    x = np.asarray(x, dtype=np.float64)
    return pgd_batch(params, x[None, :], [y], cfg).x_adv[0]


@dataclass
class EvalReport:
    n: int
    eps: float
    clean_accuracy: float
    robust_accuracy: float
    stability_rate: float
    correct: np.ndarray
    robust: np.ndarray
    stable: np.ndarray
    predicted: np.ndarray
    labels: np.ndarray

    @property
    def consistent(self) -> np.ndarray:
        """Per-sample check robust == (stable and correct)."""
        return self.robust == (self.stable & self.correct)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "eps": self.eps,
            "clean_accuracy": self.clean_accuracy,
            "robust_accuracy": self.robust_accuracy,
            STABILITY_COLUMN: self.stability_rate,
            "consistent_samples": int(self.consistent.sum()),
        }

    def write(self, json_path: str | Path, csv_path: str | Path, attack: AttackConfig,
              config_hash: str = "") -> None:
        payload = {"tool": TOOL, "config_hash": config_hash, "attack": asdict(attack), **self.summary()}
        Path(json_path).write_text(json.dumps(payload, indent=2) + "\n")
        with Path(csv_path).open("w", newline="") as fh:
            fh.write(f"# {TOOL} config={config_hash}\n")
            w = csv.writer(fh)
            w.writerow(["index", "label", "predicted", "correct", "robust", "stable", "consistent"])
            for i in range(self.n):
                w.writerow([i, int(self.labels[i]), int(self.predicted[i]), int(self.correct[i]),
                            int(self.robust[i]), int(self.stable[i]), int(self.consistent[i])])


def evaluate(params: NetworkParams, X, y, cfg: AttackConfig) -> EvalReport:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    pred = np.argmax(logits(params, X), axis=1)
    correct = pred == y
    broken_true = pgd_batch(params, X, y, cfg).success
    broken_pred = pgd_batch(params, X, pred, cfg).success
    robust = correct & ~broken_true
    stable = ~broken_pred
    n = len(X)
    return EvalReport(
        n=n,
        eps=cfg.eps,
        clean_accuracy=float(correct.mean()) if n else float("nan"),
        robust_accuracy=float(robust.mean()) if n else float("nan"),
        stability_rate=float(stable.mean()) if n else float("nan"),
        correct=correct,
        robust=robust,
        stable=stable,
        predicted=pred,
        labels=y,
    )
