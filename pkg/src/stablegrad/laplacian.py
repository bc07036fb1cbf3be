"""Kernel graphs over point clouds, their Laplacians, edge-sampling
sparsification and the resampled-cloud convergence experiment.

Naming: ``W`` is the Gaussian weight matrix ``W_ij = exp(-|x_i - x_j|^2 / s)``
(zero diagonal), ``D`` its degree matrix and ``Lam = D - W`` the graph
Laplacian. The discrete intrinsic norm

    (1 / N^2) * sum_ij |f(x_i) - f(x_j)|^2 W_ij

equals ``(2 / N^2) f^T Lam f`` for scalar ``f``.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import TOOL
from .errors import DataError, DomainError, ShapeError

MANIFOLDS = ("circle", "swiss-roll", "two-moons")


@dataclass
class PointCloud:
    points: np.ndarray
    parent: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2:
            raise ShapeError(f"point cloud must be n x d, got shape {self.points.shape}")
        if self.parent is not None:
            self.parent = np.asarray(self.parent, dtype=np.int64)
            if self.parent.shape != (self.n,):
                raise ShapeError("parent index must have one entry per point")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def from_csv(cls, path: str | Path) -> PointCloud:
        rows = []
        with Path(path).open(newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
                if len(rows[-1]) != len(rows[0]):
                    raise DataError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
        if not rows:
            raise DataError(f"{path}: no points")
        return cls(np.array(rows))

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            fh.write(f"# {TOOL}\n")
            w = csv.writer(fh)
            for p in self.points:
                w.writerow([f"{v:.17g}" for v in p])


def _check_scale(s: float) -> None:
    if not s > 0:
        raise DomainError(f"kernel scale s must be positive, got {s}")


def gaussian_kernel(x, y, s: float) -> float:
    _check_scale(s)
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"gaussian_kernel: dimension mismatch {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-np.dot(d, d) / s))


def sq_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kernel_matrix(X: np.ndarray, Y: np.ndarray, s: float) -> np.ndarray:
    _check_scale(s)
    return np.exp(-sq_distances(np.atleast_2d(X), np.atleast_2d(Y)) / s)


def median_scale(points: np.ndarray) -> float:
    """Default kernel scale: 2 * (median pairwise distance)^2."""
    d2 = sq_distances(points, points)
    iu = np.triu_indices(len(points), k=1)
    return float(2.0 * np.median(np.sqrt(d2[iu])) ** 2)


@dataclass(frozen=True)
class Knn:
    k: int


@dataclass(frozen=True)
class Ball:
    r: float


@dataclass
class LaplacianOperator:
    degree: np.ndarray
    W: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.degree) - self.W

    def quadratic_form(self, f) -> float:
        f = np.asarray(f, dtype=np.float64)
        return float(f @ (self.degree * f) - f @ self.W @ f)


@dataclass
class WeightedGraph:
    """Symmetric nonnegative weights with zero diagonal, stored dense."""

    W: np.ndarray
    s: float | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ShapeError(f"weight matrix must be square, got {self.W.shape}")
        if not np.array_equal(self.W, self.W.T):
            raise DomainError("weight matrix must be symmetric")
        if np.any(np.diag(self.W) != 0.0):
            raise DomainError("weight matrix must have a zero diagonal")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @classmethod
    def _trusted(cls, W: np.ndarray, s: float | None) -> WeightedGraph:
        g = cls.__new__(cls)
        g.W, g.s = W, s
        return g

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edges ``i < j`` with positive weight as index and weight arrays."""
        cached = self.__dict__.get("_edges")
        if cached is None or cached[0] is not self.W:
            i, j = np.nonzero(np.triu(self.W, k=1))
            cached = (self.W, (i, j, self.W[i, j]))
            self.__dict__["_edges"] = cached
        return cached[1]

    def laplacian(self) -> LaplacianOperator:
        return LaplacianOperator(self.W.sum(axis=1), self.W)

    def quadratic_form(self, f) -> float:
        return self.laplacian().quadratic_form(f)


def build_graph(cloud: PointCloud, s: float, truncation: Knn | Ball | None = None) -> WeightedGraph:
    """Gaussian graph over the cloud, optionally truncated.

    ``Knn(k)`` keeps an edge when either endpoint has the other among its k
    nearest neighbours; ``Ball(r)`` keeps edges of length <= r.
    """
    n = cloud.n
    if n < 2:
        raise DomainError("need at least 2 points to build a graph")
    _check_scale(s)
    d2 = sq_distances(cloud.points, cloud.points)
    W = np.exp(-d2 / s)
    np.fill_diagonal(W, 0.0)
    if isinstance(truncation, Knn):
        if not 1 <= truncation.k < n:
            raise DomainError(f"knn needs 1 <= k < n, got k={truncation.k}, n={n}")
        order = np.argsort(d2 + np.diag(np.full(n, np.inf)), axis=1, kind="stable")
        keep = np.zeros((n, n), dtype=bool)
        rows = np.repeat(np.arange(n), truncation.k)
        keep[rows, order[:, : truncation.k].ravel()] = True
        W = np.where(keep | keep.T, W, 0.0)
    elif isinstance(truncation, Ball):
        if not truncation.r > 0:
            raise DomainError(f"ball radius must be positive, got {truncation.r}")
        W = np.where(d2 <= truncation.r ** 2, W, 0.0)
    elif truncation is not None:
        raise DomainError(f"unknown truncation {truncation!r}")
    return WeightedGraph(W, s)


def discrete_intrinsic_norm(values, graph: WeightedGraph) -> float:
    """(1/N^2) sum over ordered pairs of |f_i - f_j|^2 W_ij."""
    f = np.asarray(values, dtype=np.float64)
    if f.shape[0] != graph.n:
        raise ShapeError(f"{f.shape[0]} values for a graph with {graph.n} nodes")
    f = f.reshape(graph.n, -1)
    i, j, w = graph.edges()
    diff = f[i] - f[j]
    return float(2.0 * np.sum(w * np.sum(diff * diff, axis=1)) / graph.n ** 2)


def sparsify_by_edge_sampling(graph: WeightedGraph, m: int,
                              seed: int | np.random.Generator = 0) -> WeightedGraph:
    """Draw ``m`` edges i.i.d. with probability proportional to weight.

    Each draw adds ``total_weight / m`` to its edge, which makes every entry
    of the sparsified weight matrix an unbiased estimate of the original.
    """
    if m < 1:
        raise DomainError(f"need m >= 1 edge draws, got {m}")
    i, j, w = graph.edges()
    total = w.sum()
    if not total > 0:
        raise DomainError("graph has no positive-weight edge to sample")
    rng = np.random.default_rng(seed)
    counts = np.bincount(rng.choice(len(w), size=m, p=w / total), minlength=len(w))
    new = np.zeros_like(graph.W)
    hit = counts > 0
    new[i[hit], j[hit]] = counts[hit] * (total / m)
    new[j[hit], i[hit]] = new[i[hit], j[hit]]
    return WeightedGraph._trusted(new, graph.s)


@dataclass
class AuditRow:
    m: int
    draws: int
    exact: float
    mean: float
    stderr: float
    z: float
    variance: float

    @property
    def variance_times_m(self) -> float:
        return self.variance * self.m


def sparsify_audit(graph: WeightedGraph, x, ms: Sequence[int], draws: int,
                   seed: int = 0) -> list[AuditRow]:
    """Monte Carlo check of E[x^T Lam' x] = x^T Lam x for each edge budget."""
    x = np.asarray(x, dtype=np.float64)
    exact = graph.quadratic_form(x)
    rows = []
    for m in ms:
        rng = np.random.default_rng([seed, m])
        q = np.array([sparsify_by_edge_sampling(graph, m, rng).quadratic_form(x) for _ in range(draws)])
        mean, var = q.mean(), q.var(ddof=1)
        se = np.sqrt(var / draws)
        rows.append(AuditRow(m, draws, exact, float(mean), float(se), float((mean - exact) / se) if se > 0 else 0.0, float(var)))
    return rows


# --- resampling and the out-of-sample operator ------------------------------


def _open_ball(rng: np.random.Generator, n: int, d: int, eps: float, norm: str) -> np.ndarray:
    out = np.empty((n, d))
    todo = np.arange(n)
    while todo.size:
        k = todo.size
        if norm == "l2":
            g = rng.normal(size=(k, d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            delta = g * (eps * rng.random(k) ** (1.0 / d))[:, None]
            ok = np.linalg.norm(delta, axis=1) < eps
        elif norm == "linf":
            delta = rng.uniform(-eps, eps, size=(k, d))
            ok = np.max(np.abs(delta), axis=1) < eps
        else:
            raise DomainError(f"unknown norm {norm!r}; expected 'l2' or 'linf'")
        out[todo[ok]] = delta[ok]
        todo = todo[~ok]
    return out


def resample_cloud(cloud: PointCloud, eps: float, c: int, norm: str = "l2",
                   seed: int | np.random.Generator = 0) -> PointCloud:
    """``c`` perturbed copies of every point, drawn uniformly from the open
    eps-ball; copies of point ``i`` are contiguous and carry parent ``i``."""
    if not eps > 0 or c < 1:
        raise DomainError(f"need eps > 0 and c >= 1, got eps={eps}, c={c}")
    rng = np.random.default_rng(seed)
    parent = np.repeat(np.arange(cloud.n), c)
    delta = _open_ball(rng, cloud.n * c, cloud.dim, eps, norm)
    return PointCloud(cloud.points[parent] + delta, parent)


def discrete_operator(points: np.ndarray, s: float, f_vals: np.ndarray,
                      probes: np.ndarray, f_probes: np.ndarray) -> np.ndarray:
    """Vectorized out-of-sample operator at several probe points.

    Evaluated as (1/N) sum_i k(x, x_i) (f(x) - f(x_i)), which equals the
    two-sum form and vanishes exactly on constants.
    """
    K = kernel_matrix(probes, points, s)
    N = points.shape[0]
    return np.sum(K * (f_probes[:, None] - f_vals[None, :]), axis=1) / N


def discrete_operator_apply(cloud: PointCloud, s: float, f, x, fx: float) -> float:
    """(1/N) sum_i k_s(x, x_i) f(x) - (1/N) sum_i k_s(x, x_i) f(x_i)."""
    if cloud.n == 0:
        raise DomainError("operator needs a non-empty cloud")
    _check_scale(s)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (cloud.n,):
        raise ShapeError(f"{f.shape} function values for a cloud of {cloud.n} points")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(discrete_operator(cloud.points, s, f, x[None, :], np.array([fx]))[0])


def sample_manifold(manifold: str, n: int, rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    """Points drawn uniformly in the manifold's parameter space.

    circle: unit circle in the first two of ``dim`` coordinates.
    swiss-roll: the usual roll t*(cos t, sin t) with height, scaled by 1/10.
    two-moons: noiseless moons, each half-circle chosen with probability 1/2.
    """
    if manifold == "circle":
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        X = np.zeros((n, max(dim, 2)))
        X[:, 0], X[:, 1] = np.cos(theta), np.sin(theta)
        return X
    if manifold == "swiss-roll":
        t = 1.5 * np.pi * (1.0 + 2.0 * rng.random(n))
        h = 21.0 * rng.random(n)
        return np.column_stack([t * np.cos(t), h, t * np.sin(t)]) / 10.0
    if manifold == "two-moons":
        theta = rng.uniform(0.0, np.pi, n)
        upper = rng.random(n) < 0.5
        x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
        return np.column_stack([x, y])
    raise DomainError(f"unknown manifold {manifold!r}; expected one of {', '.join(MANIFOLDS)}")


TestFunction = Callable[[np.ndarray], np.ndarray]


def default_test_functions(dim: int) -> list[tuple[str, TestFunction]]:
    """Coordinate projections, one fixed random linear map, sin(x_0)."""
    fns: list[tuple[str, TestFunction]] = [(f"x{k}", (lambda X, k=k: X[:, k])) for k in range(dim)]
    w = np.random.default_rng(20240917).normal(size=dim)
    fns.append(("linear", lambda X: X @ w))
    fns.append(("sin_x0", lambda X: np.sin(X[:, 0])))
    return fns


@dataclass
class ConvergenceRow:
    manifold: str
    N: int
    eps: float
    s: float
    c: int
    seed: int
    discrepancy: float


def _eps_key(eps: float) -> int:
    return int(np.float64(eps).view(np.uint64))


def convergence_cell(manifold: str, N: int, eps: float, c: int, s: float, seed: int,
                     probes: int = 50, norm: str = "l2", dim: int = 2,
                     test_functions: list[tuple[str, TestFunction]] | None = None) -> float:
    """Mean |L f(x) - L_c f(x)| over test functions and probe points.

    The cloud and probes depend only on (seed, N), so cells that differ in
    eps share them; the perturbations come from an independent stream.
    """
    base = np.random.default_rng([seed, N])
    pts = sample_manifold(manifold, N, base, dim)
    probe_pts = sample_manifold(manifold, probes, base, dim)
    cloud = PointCloud(pts)
    res = resample_cloud(cloud, eps, c, norm, np.random.default_rng([seed, N, _eps_key(eps)]))
    fns = test_functions or default_test_functions(pts.shape[1])
    gaps = []
    for _, fn in fns:
        fp = fn(probe_pts)
        orig = discrete_operator(pts, s, fn(pts), probe_pts, fp)
        resampled = discrete_operator(res.points, s, fn(res.points), probe_pts, fp)
        gaps.append(np.abs(orig - resampled))
    return float(np.mean(gaps))


def convergence_experiment(manifold: str, n_grid: Sequence[int], eps_grid: Sequence[float], c: int,
                           s: float, seeds: Sequence[int], probes: int = 50, norm: str = "l2",
                           dim: int = 2, test_functions=None, workers: int = 1) -> list[ConvergenceRow]:
    """Resampled-vs-original operator discrepancy over an (N, eps, seed) grid.

    Requires eps^2 < s for every eps in the grid.
    """
    if manifold not in MANIFOLDS:
        raise DomainError(f"unknown manifold {manifold!r}; expected one of {', '.join(MANIFOLDS)}")
    _check_scale(s)
    for eps in eps_grid:
        if not eps ** 2 < s:
            raise DomainError(f"grid pair (eps={eps}, s={s}) violates eps^2 < s")
    cells = [(N, eps, seed) for N in n_grid for eps in eps_grid for seed in seeds]

    def run(cell):
        N, eps, seed = cell
        d = convergence_cell(manifold, N, eps, c, s, seed, probes, norm, dim, test_functions)
        return ConvergenceRow(manifold, N, eps, s, c, seed, d)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, cells))
    return [run(cell) for cell in cells]


CONVERGENCE_COLUMNS = ("manifold", "N", "eps", "s", "c", "seed", "discrepancy")


def write_convergence_csv(rows: Sequence[ConvergenceRow], path: str | Path, config_hash: str = "") -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# {TOOL} config={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_COLUMNS)
        for r in rows:
            w.writerow([r.manifold, r.N, repr(r.eps), repr(r.s), r.c, r.seed, repr(r.discrepancy)])


def mean_discrepancy(rows: Sequence[ConvergenceRow]) -> dict[tuple[int, float], float]:
    """Average discrepancy over seeds, keyed by (N, eps)."""
    acc: dict[tuple[int, float], list[float]] = {}
    for r in rows:
        acc.setdefault((r.N, r.eps), []).append(r.discrepancy)
    return {k: float(np.mean(v)) for k, v in acc.items()}
