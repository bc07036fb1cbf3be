"""Desk-scale datasets: synthetic generators and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import TOOL
from . import config as cfgmod
from .errors import ConfigError, DataError

KINDS = ("two-moons", "blobs", "circle-manifold", "csv-table", "raw-image-grid")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "two-moons"
    size: int = 1000
    noise: float = 0.15
    input_dim: int = 2
    classes: int = 2
    seed: int = 0
    path: str = ""
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"dataset: unknown kind {self.kind!r} (expected one of {', '.join(KINDS)})")
        if self.kind in ("csv-table", "raw-image-grid") and not self.path:
            raise ConfigError(f"dataset: kind {self.kind!r} needs dataset.path")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")
        if self.size < 2 and self.kind not in ("csv-table", "raw-image-grid"):
            raise ConfigError("dataset.size must be >= 2")

    @property
    def image_like(self) -> bool:
        return self.kind == "raw-image-grid"

    @classmethod
    def from_mapping(cls, m: dict[str, str], default_seed: int = 0) -> DatasetSpec:
        """Consume ``dataset`` and ``dataset.*`` keys from ``m``."""
        kw = {"kind": m.pop("dataset", cls.kind), "seed": default_seed}
        if "dataset.size" in m:
            kw["size"] = cfgmod.integer(m.pop("dataset.size"), "dataset.size")
        if "dataset.noise" in m:
            kw["noise"] = cfgmod.number(m.pop("dataset.noise"), "dataset.noise")
        if "dataset.dim" in m:
            kw["input_dim"] = cfgmod.integer(m.pop("dataset.dim"), "dataset.dim")
        if "dataset.classes" in m:
            kw["classes"] = cfgmod.integer(m.pop("dataset.classes"), "dataset.classes")
        if "dataset.seed" in m:
            kw["seed"] = cfgmod.integer(m.pop("dataset.seed"), "dataset.seed")
        if "dataset.path" in m:
            kw["path"] = m.pop("dataset.path")
        if "dataset.test_fraction" in m:
            kw["test_fraction"] = cfgmod.number(m.pop("dataset.test_fraction"), "dataset.test_fraction")
        return cls(**kw)

    def to_mapping(self) -> dict[str, str]:
        return {
            "dataset": self.kind,
            "dataset.size": str(self.size),
            "dataset.noise": cfgmod.fmt_number(self.noise),
            "dataset.dim": str(self.input_dim),
            "dataset.classes": str(self.classes),
            "dataset.seed": str(self.seed),
            "dataset.path": self.path,
            "dataset.test_fraction": cfgmod.fmt_number(self.test_fraction),
        }


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    clip: tuple[float, float] | None = None

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


def two_moons(size: int, noise: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    from sklearn.datasets import make_moons

    X, y = make_moons(n_samples=size, noise=noise, random_state=seed)
    return X.astype(np.float64), y.astype(np.int64)


def blobs(size: int, noise: float, dim: int, classes: int, seed: int):
    """Isotropic Gaussian blobs; also returns the class centers."""
    from sklearn.datasets import make_blobs

    X, y, centers = make_blobs(
        n_samples=size, n_features=dim, centers=classes, cluster_std=noise,
        random_state=seed, return_centers=True,
    )
    return X.astype(np.float64), y.astype(np.int64), centers


def circle_manifold(size: int, noise: float, dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit circle in the first two of ``dim`` coordinates; label = upper half."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * np.pi, size)
    X = np.zeros((size, max(dim, 2)))
    X[:, 0], X[:, 1] = np.cos(theta), np.sin(theta)
    if noise > 0:
        X += rng.normal(0.0, noise, X.shape)
    return X, (theta < np.pi).astype(np.int64)


def read_csv_table(path: str | Path, label_first: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Numeric CSV, one sample per row; the label is the last (or first) column.

    Lines starting with ``#`` are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    feats, labels, width = [], [], None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if width is None:
                width = len(row)
            if len(row) != width or width < 2:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            lab = vals[0] if label_first else vals[-1]
            if lab != int(lab) or lab < 0:
                raise DataError(f"{path}:{lineno}: label {lab!r} is not a non-negative integer")
            labels.append(int(lab))
            feats.append(vals[1:] if label_first else vals[:-1])
    if not feats:
        raise DataError(f"{path}: no data rows")
    return np.array(feats, dtype=np.float64), np.array(labels, dtype=np.int64)


def write_csv_table(path: str | Path, X: np.ndarray, y: np.ndarray, header: str = "") -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# {TOOL}{' ' + header if header else ''}\n")
        w = csv.writer(fh)
        for row, lab in zip(np.asarray(X), np.asarray(y)):
            w.writerow([f"{v:.17g}" for v in row] + [int(lab)])


def split(X: np.ndarray, y: np.ndarray, test_fraction: float, seed: int):
    n = len(X)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    test, train = perm[:n_test], perm[n_test:]
    return X[train], y[train], X[test], y[test]


def load_or_generate(spec: DatasetSpec) -> Dataset:
    clip = None
    if spec.kind == "two-moons":
        X, y = two_moons(spec.size, spec.noise, spec.seed)
    elif spec.kind == "blobs":
        X, y, _ = blobs(spec.size, spec.noise, spec.input_dim, spec.classes, spec.seed)
    elif spec.kind == "circle-manifold":
        X, y = circle_manifold(spec.size, spec.noise, spec.input_dim, spec.seed)
    elif spec.kind == "csv-table":
        X, y = read_csv_table(spec.path)
    else:
        X, y = read_csv_table(spec.path, label_first=True)
        lo, hi = X.min(), X.max()
        X = (X - lo) / (hi - lo) if hi > lo else np.zeros_like(X)
        clip = (0.0, 1.0)
    n_classes = max(int(y.max()) + 1, spec.classes if spec.kind == "blobs" else 2)
    return Dataset(*split(X, y, spec.test_fraction, spec.seed), n_classes=n_classes, clip=clip)
