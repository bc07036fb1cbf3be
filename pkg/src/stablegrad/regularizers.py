"""Training-time regularizers evaluated on antipodal corner pairs.

For each input ``x`` a corner ``x+ = x + rho`` of the l-inf box of radius
``eps`` is drawn (``rho`` in {-eps, +eps}^d) together with the opposite
corner ``x- = 2x - x+``. Two penalties are computed on the pair:

* intrinsic: squared l2 distance between the network outputs at x+ and x-;
* Hamming: a tanh relaxation of the number of hidden units whose sign
  differs between x+ and x-, combined per layer with an l2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError, ShapeError
from .relu_net import ForwardTrace, NetworkParams


@dataclass(frozen=True)
class RegWeights:
    gamma_k: float = 0.0
    gamma_i: float = 0.0
    gamma_h: float = 0.0
    alpha: float = 8.0

    def __post_init__(self):
        if min(self.gamma_k, self.gamma_i, self.gamma_h) < 0:
            raise DomainError(f"regularization weights must be non-negative: {self}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class PerturbationPair:
    """A point (or a batch of points, one per row) and its antipodal corners."""

    x: np.ndarray
    rho: np.ndarray
    eps: float

    @property
    def x_plus(self) -> np.ndarray:
        return self.x + self.rho

    @property
    def x_minus(self) -> np.ndarray:
        return 2.0 * self.x - self.x_plus


def sample_pair(x, eps: float, seed: int | np.random.Generator = 0) -> PerturbationPair:
    """Draw ``rho`` with i.i.d. uniform signs; works on a point or a batch."""
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    signs = rng.integers(0, 2, size=x.shape) * 2 - 1
    return PerturbationPair(x, signs * float(eps), float(eps))


def intrinsic_loss(out_plus: Tensor, out_minus: Tensor) -> Tensor:
    """Batch mean of ||f(x+) - f(x-)||^2; a 1-D pair counts as a batch of one."""
    if out_plus.shape != out_minus.shape:
        raise ShapeError(f"intrinsic_loss: shape mismatch {out_plus.shape} vs {out_minus.shape}")
    sq = ad.square(ad.sub(out_plus, out_minus))
    batch = 1 if sq.ndim == 1 else sq.shape[0]
    return ad.scale(ad.sum(sq), 1.0 / batch)


def soft_hamming(zhat: Tensor, yhat: Tensor, alpha: float) -> Tensor:
    """|tanh(alpha*zhat) - tanh(alpha*yhat)| elementwise."""
    if zhat.shape != yhat.shape:
        raise ShapeError(f"soft_hamming: shape mismatch {zhat.shape} vs {yhat.shape}")
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    return ad.abs(ad.sub(ad.tanh(ad.scale(zhat, alpha)), ad.tanh(ad.scale(yhat, alpha))))


def _layer_term(zp: Tensor, zm: Tensor, alpha: float) -> Tensor:
    # l2 norm over units per sample, / (2 * units), then batch mean
    h = soft_hamming(zp, zm, alpha)
    units = h.shape[-1]
    if h.ndim == 1:
        return ad.scale(ad.sqrt(ad.sum(ad.square(h))), 1.0 / (2 * units))
    norms = ad.sqrt(ad.sum(ad.square(h), axis=1))
    return ad.scale(ad.sum(norms), 1.0 / (2 * units * h.shape[0]))


class HammingAccumulator:
    """Streaming form of :func:`hamming_reg_loss`.

    Feed it each hidden layer's pre-activations for the plus and minus
    corners as the forward pass produces them; only the running sum is kept.
    """

    def __init__(self, alpha: float, n_hidden: int):
        self.alpha = alpha
        self.n_hidden = n_hidden
        self._total: Tensor | None = None
        self._seen = 0

    def add(self, zp: Tensor, zm: Tensor) -> None:
        term = _layer_term(zp, zm, self.alpha)
        self._total = term if self._total is None else ad.add(self._total, term)
        self._seen += 1

    def value(self) -> Tensor:
        if self._seen != self.n_hidden:
            raise ShapeError(f"accumulated {self._seen} hidden layers, expected {self.n_hidden}")
        if self._total is None:
            return Tensor(0.0)
        return ad.scale(self._total, 1.0 / self.n_hidden)


def hamming_reg_loss(trace_plus: ForwardTrace, trace_minus: ForwardTrace, alpha: float) -> Tensor:
    """Relaxed Hamming penalty between two traces of the same network.

    Per hidden layer: ||H_alpha(zhat+, zhat-)||_2 / (2 * units), averaged
    over the batch; the layer values are summed and divided by the number of
    hidden layers.
    """
    hp, hm = trace_plus.hidden_pre, trace_minus.hidden_pre
    if len(hp) != len(hm) or any(a.shape != b.shape for a, b in zip(hp, hm)):
        raise ShapeError("hamming_reg_loss: traces have different layer structure")
    acc = HammingAccumulator(alpha, len(hp))
    for zp, zm in zip(hp, hm):
        acc.add(zp, zm)
    return acc.value()


def ambient_loss(params: NetworkParams) -> Tensor:
    """Sum of squared entries of every weight and bias."""
    total = None
    for t in params.tensors():
        s = ad.sum(ad.square(t))
        total = s if total is None else ad.add(total, s)
    return total
