"""Fully connected ReLU networks, their activation patterns and checkpoints.

A network with layer dims ``d0, ..., d_{n-1}`` computes

    zhat_i = A_i z_{i-1} + b_i        i = 1..n-1
    z_i    = max(0, zhat_i)           i = 1..n-2

and returns the last pre-activation ``zhat_{n-1}`` (logits). The hidden
pre-activations determine which linear piece of the network an input falls
in; their sign bits form the input's Hamming embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError, ShapeError

CKPT_MAGIC = "stablegrad-ckpt"
CKPT_VERSION = "v1"


@dataclass
class NetworkParams:
    """Weights ``A_i`` (d_i x d_{i-1}) and biases ``b_i`` (d_i) for i = 1..n-1."""

    dims: tuple[int, ...]
    weights: list[Tensor]
    biases: list[Tensor]

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) < 2:
            raise ShapeError(f"a network needs at least 2 layer dims, got {self.dims}")
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.dims) - 1:
            raise ShapeError("need exactly one weight matrix and bias per affine layer")
        for i, (A, b) in enumerate(zip(self.weights, self.biases), start=1):
            want = (self.dims[i], self.dims[i - 1])
            if A.shape != want:
                raise ShapeError(f"weight {i} has shape {A.shape}, expected {want}")
            if b.shape != (self.dims[i],):
                raise ShapeError(f"bias {i} has shape {b.shape}, expected {(self.dims[i],)}")

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence, requires_grad: bool = True) -> NetworkParams:
        ws = [Tensor(w, requires_grad=requires_grad) for w in weights]
        bs = [Tensor(b, requires_grad=requires_grad) for b in biases]
        if not ws or ws[0].ndim != 2:
            raise ShapeError("need at least one 2-D weight matrix")
        dims = [ws[0].shape[1]] + [w.shape[0] for w in ws]
        return cls(tuple(dims), ws, bs)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> NetworkParams:
        dims = tuple(dims)
        ws = [np.zeros((dims[i], dims[i - 1])) for i in range(1, len(dims))]
        bs = [np.zeros(dims[i]) for i in range(1, len(dims))]
        return cls.from_arrays(ws, bs)

    @classmethod
    def init_he(cls, dims: Sequence[int], seed: int | np.random.Generator = 0) -> NetworkParams:
        """He initialization: N(0, 2/fan_in) weights, zero biases."""
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in dims)
        ws = [rng.normal(0.0, np.sqrt(2.0 / dims[i - 1]), size=(dims[i], dims[i - 1])) for i in range(1, len(dims))]
        bs = [np.zeros(dims[i]) for i in range(1, len(dims))]
        return cls.from_arrays(ws, bs)

    @property
    def n_layers(self) -> int:
        return len(self.dims)

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.dims[1:-1]

    def tensors(self) -> list[Tensor]:
        out = []
        for A, b in zip(self.weights, self.biases):
            out += [A, b]
        return out

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (A, b) in enumerate(zip(self.weights, self.biases), start=1):
            out += [(f"A{i}", A), (f"b{i}", b)]
        return out

    def arrays(self) -> list[np.ndarray]:
        return [t.data for t in self.tensors()]

    def copy(self) -> NetworkParams:
        return NetworkParams.from_arrays(
            [A.data.copy() for A in self.weights], [b.data.copy() for b in self.biases]
        )

    def set_arrays(self, arrays: Sequence[np.ndarray]) -> NetworkParams:
        """Return new params with the given flat list of arrays (A1, b1, A2, ...)."""
        return NetworkParams.from_arrays(list(arrays[0::2]), list(arrays[1::2]))


@dataclass
class ForwardTrace:
    """Everything a forward pass produced.

    ``pre`` holds zhat_1..zhat_{n-1} and ``post`` holds z_1..z_{n-2}; the
    output is ``pre[-1]``. For a batched pass every entry is B x d_i.
    """

    x: Tensor
    pre: list[Tensor]
    post: list[Tensor] = field(default_factory=list)

    @property
    def output(self) -> Tensor:
        return self.pre[-1]

    @property
    def hidden_pre(self) -> list[Tensor]:
        return self.pre[:-1]


LayerHook = Callable[[int, Tensor], None]


def _affine(A: Tensor, b: Tensor, z: Tensor) -> Tensor:
    if z.ndim == 1:
        return ad.add(ad.matmul(A, z), b)
    ones = Tensor(np.ones((z.shape[0], 1)))
    return ad.add(ad.matmul(z, ad.transpose(A)), ad.matmul(ones, ad.reshape(b, (1, b.shape[0]))))


def forward(params: NetworkParams, x, on_hidden: LayerHook | None = None, keep: bool = True) -> ForwardTrace:
    """Run the network on one input (1-D) or a batch (2-D, one row per input).

    ``on_hidden(layer_index, zhat)`` is called for each hidden pre-activation
    as soon as it is computed. With ``keep=False`` the trace only retains the
    output, for callers that consume hidden layers through the hook.
    """
    x = ad.tensor(x)
    if x.ndim not in (1, 2) or x.shape[-1] != params.dims[0]:
        raise ShapeError(f"input of shape {x.shape} does not match input dim {params.dims[0]}")
    pre: list[Tensor] = []
    post: list[Tensor] = []
    z = x
    last = len(params.weights) - 1
    for i, (A, b) in enumerate(zip(params.weights, params.biases)):
        zhat = _affine(A, b, z)
        if i == last:
            pre.append(zhat)
            break
        if on_hidden is not None:
            on_hidden(i, zhat)
        z = ad.relu(zhat)
        if keep:
            pre.append(zhat)
            post.append(z)
    return ForwardTrace(x, pre, post)


def forward_rows(params: NetworkParams, X) -> np.ndarray:
    """Reference batch evaluation: one single-sample forward per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.stack([forward(params, Tensor(row)).output.data for row in X])


def logits(params: NetworkParams, X) -> np.ndarray:
    """Batched logits as a plain array (no gradient tracking on the input)."""
    return forward(params, Tensor(np.atleast_2d(X))).output.data


def predict(params: NetworkParams, X) -> np.ndarray:
    return np.argmax(logits(params, X), axis=1)


# --- Hamming embeddings -----------------------------------------------------


@dataclass(frozen=True)
class HammingPattern:
    """Per hidden layer, one bit per unit: 1 iff the pre-activation is > 0."""

    layers: tuple[tuple[int, ...], ...]

    @property
    def n_bits(self) -> int:
        return int(np.sum([len(layer) for layer in self.layers]))

    def bits(self) -> tuple[int, ...]:
        return tuple(b for layer in self.layers for b in layer)


def pattern_from_arrays(hidden: Sequence[np.ndarray]) -> HammingPattern:
    return HammingPattern(tuple(tuple(int(v > 0.0) for v in np.ravel(h)) for h in hidden))


def hamming_embedding(trace: ForwardTrace) -> HammingPattern:
    """Activation pattern of a single-sample trace (ties zhat == 0 are 0)."""
    if trace.x.ndim != 1:
        raise ShapeError("hamming_embedding expects a single-sample trace; use batch_patterns for batches")
    return pattern_from_arrays([h.data for h in trace.hidden_pre])


def hamming_distance(a: HammingPattern, b: HammingPattern) -> int:
    if [len(layer) for layer in a.layers] != [len(layer) for layer in b.layers]:
        raise ShapeError("hamming_distance: patterns come from different layer structures")
    return int(np.sum([x != y for la, lb in zip(a.layers, b.layers) for x, y in zip(la, lb)]))


def batch_patterns(params: NetworkParams, X) -> np.ndarray:
    """Boolean activation bits, one row per input, hidden layers concatenated."""
    trace = forward(params, Tensor(np.atleast_2d(X)))
    if not trace.hidden_pre:
        return np.zeros((trace.x.shape[0], 0), dtype=bool)
    return np.concatenate([h.data > 0.0 for h in trace.hidden_pre], axis=1)


def count_linear_regions_1d(params: NetworkParams, segment, resolution: int) -> int:
    """Number of distinct activation patterns at ``resolution`` evenly spaced
    points on the segment ``[x_a, x_b]`` (endpoints included).

    This is a lower bound on the number of linear pieces the segment crosses.
    """
    x_a, x_b = (np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in segment)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    t = np.linspace(0.0, 1.0, int(resolution))[:, None]
    pts = (1.0 - t) * x_a[None, :] + t * x_b[None, :]
    bits = batch_patterns(params, pts)
    return len({row.tobytes() for row in np.packbits(bits, axis=1)}) if bits.size else 1


# --- checkpoints ------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_checkpoint(params: NetworkParams, path: str | Path, header_extra: str = "") -> None:
    """Write the versioned text checkpoint.

    Layout: ``stablegrad-ckpt v1 [extra]``, then ``dims d0 d1 ...``, then one
    line per tensor ``name rows x cols v v v ...`` with 17 significant digits.
    """
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}" + (f" {header_extra}" if header_extra else "")]
    lines.append("dims " + " ".join(str(d) for d in params.dims))
    for name, t in params.named_tensors():
        shp = "x".join(str(s) for s in t.shape)
        lines.append(f"{name} {shp} " + " ".join(_fmt(v) for v in t.data.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> NetworkParams:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    head = lines[0].split() if lines else []
    if head[:2] != [CKPT_MAGIC, CKPT_VERSION]:
        raise DataError(f"{path}: not a {CKPT_MAGIC} {CKPT_VERSION} file")
    dims_line = lines[1].split()
    if dims_line[0] != "dims":
        raise DataError(f"{path}: line 2 must start with 'dims'")
    dims = [int(d) for d in dims_line[1:]]
    tensors = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        name, shp, *vals = line.split()
        shape = tuple(int(s) for s in shp.split("x"))
        arr = np.array([float(v) for v in vals], dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise DataError(f"{path}:{lineno}: {name} has {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(shape)
    n = len(dims) - 1
    try:
        ws = [tensors[f"A{i}"] for i in range(1, n + 1)]
        bs = [tensors[f"b{i}"] for i in range(1, n + 1)]
    except KeyError as exc:
        raise DataError(f"{path}: missing tensor {exc.args[0]}") from None
    params = NetworkParams.from_arrays(ws, bs)
    if list(params.dims) != dims:
        raise DataError(f"{path}: dims line {dims} disagrees with tensor shapes {params.dims}")
    return params
