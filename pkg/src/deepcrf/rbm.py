"""Greedy layer-wise RBM pretraining with one-step contrastive divergence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import EncoderWeights, augment, logistic


@dataclass
class RbmLayer:
    """Binary RBM. ``W`` is ``[d_v + 1, d_h]``; its last row is the hidden bias."""

    W: np.ndarray
    vbias: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.vbias = np.asarray(self.vbias, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[0] != self.vbias.shape[0] + 1:
            raise ValueError("RBM weights %s do not match %d visible units"
                             % (self.W.shape, self.vbias.shape[0]))
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.vbias))):
            raise ValueError("RBM parameters must be finite")

    @property
    def n_visible(self) -> int:
        return self.vbias.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @classmethod
    def random(cls, n_visible, n_hidden, rng, scale=0.01):
        W = np.zeros((n_visible + 1, n_hidden))
        W[:-1] = rng.normal(0.0, scale, size=(n_visible, n_hidden))
        return cls(W, np.zeros(n_visible))


@dataclass
class PretrainReport:
    """Mean reconstruction error per epoch, one list per layer."""

    errors: list[list[float]] = field(default_factory=list)


def hidden_probs(v: np.ndarray, layer: RbmLayer) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.n_visible:
        raise ValueError("visible vector of width %d, RBM has %d visible units"
                         % (v.shape[-1], layer.n_visible))
    return logistic(augment(v) @ layer.W)


def visible_probs(h: np.ndarray, layer: RbmLayer) -> np.ndarray:
    return logistic(h @ layer.W[:-1].T + layer.vbias)


def _row_uniforms(batch: np.ndarray, n: int, seed: int) -> np.ndarray:
    # Noise is drawn per distinct row, so duplicated rows share one sample
    # and repeating a row leaves the averaged update unchanged.
    uniq, inverse = np.unique(batch, axis=0, return_inverse=True)
    u = np.random.default_rng(seed).random((uniq.shape[0], n))
    return u[inverse.reshape(-1)]


def cd1_step(batch: np.ndarray, layer: RbmLayer, lr: float, rng_seed: int) -> tuple[RbmLayer, float]:
    """One CD-1 update on ``batch`` (``[B, d_v]``).

    Returns the updated layer (the input is not modified) and the mean
    squared reconstruction error of the batch under the pre-update layer.
    """
    v0 = np.asarray(batch, dtype=np.float64)
    if v0.ndim == 1:
        v0 = v0[None, :]
    if v0.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(v0)):
        raise ValueError("batch contains non-finite values")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    B = v0.shape[0]

    ph0 = hidden_probs(v0, layer)
    h0 = (_row_uniforms(v0, layer.n_hidden, rng_seed) < ph0).astype(np.float64)
    v1 = visible_probs(h0, layer)
    ph1 = hidden_probs(v1, layer)
    err = float(np.mean((v0 - v1) ** 2))

    dW = (augment(v0).T @ ph0 - augment(v1).T @ ph1) / B
    dvb = (v0 - v1).mean(axis=0)
    return RbmLayer(layer.W + lr * dW, layer.vbias + lr * dvb), err


def train_rbm(data: np.ndarray, n_hidden: int, epochs: int, lr: float, batch_size: int,
              seed: int, layer: RbmLayer | None = None) -> tuple[RbmLayer, list[float]]:
    """Mini-batch CD-1 over ``data`` for ``epochs`` shuffled passes."""
    data = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if layer is None:
        layer = RbmLayer.random(data.shape[1], n_hidden, rng)
    errors = []
    M = data.shape[0]
    for _ in range(epochs):
        order = rng.permutation(M)
        total = 0.0
        for start in range(0, M, batch_size):
            idx = order[start:start + batch_size]
            layer, err = cd1_step(data[idx], layer, lr, int(rng.integers(2**63)))
            total += err * len(idx)
        errors.append(total / M)
    return layer, errors


def _unit_scaling(frames: np.ndarray):
    """Per-dimension min-max map into [0, 1]; identity when already inside."""
    lo = frames.min(axis=0)
    hi = frames.max(axis=0)
    if lo.min() >= 0.0 and hi.max() <= 1.0:
        return None
    span = hi - lo
    inv = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0)
    return lo, inv


def greedy_pretrain(frames: np.ndarray, layer_sizes, epochs: int, lr: float = 0.1, batch: int = 100,
                    seed: int = 0) -> tuple[EncoderWeights, PretrainReport]:
    """Stack RBMs bottom-up and export their forward weights as an encoder.

    Layer ``l`` trains on the hidden probabilities of layer ``l - 1``.
    Inputs outside [0, 1] are min-max scaled per dimension for the first
    RBM; the scaling is folded into the exported first-layer weights so the
    encoder consumes raw frames.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("need a non-empty [M, d] frame matrix")
    layer_sizes = [int(s) for s in layer_sizes]
    if layer_sizes[0] != frames.shape[1]:
        raise ValueError("layer_sizes[0]=%d but frames have d=%d" % (layer_sizes[0], frames.shape[1]))
    if len(layer_sizes) < 2:
        raise ValueError("need at least one hidden layer")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    scaling = _unit_scaling(frames)
    v = frames if scaling is None else np.clip((frames - scaling[0]) * scaling[1], 0.0, 1.0)
    seeds = np.random.SeedSequence(seed).spawn(len(layer_sizes) - 1)
    weights, report = [], PretrainReport()
    for n_hidden, ss in zip(layer_sizes[1:], seeds):
        rbm, errs = train_rbm(v, n_hidden, epochs, lr, batch, int(ss.generate_state(1)[0]))
        weights.append(rbm.W.copy())
        report.errors.append(errs)
        v = hidden_probs(v, rbm)

    if scaling is not None:
        lo, inv = scaling
        W = weights[0]
        folded = W[:-1] * inv[:, None]
        bias = W[-1] - lo @ folded
        weights[0] = np.vstack([folded, bias])
    return EncoderWeights(weights), report
