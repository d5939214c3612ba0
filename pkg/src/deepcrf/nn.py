"""Deep encoder (stacked logistic layers) and the linear top layer.

Every encoder layer is a single matrix of shape ``[d_in + 1, d_out]`` whose
last row is the bias; inputs are extended with a constant 1 before the
product. The top layer maps a code ``h`` to a ``K``-vector ``W^T h + c`` and
shares ``W`` with the CRF data term.

Gradients returned here are loss gradients (descent orientation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import onehot_rows


def logistic(z):
    return expit(z)


def augment(a: np.ndarray) -> np.ndarray:
    """Append a constant-1 column (or entry) to ``a``."""
    if a.ndim == 1:
        return np.append(a, 1.0)
    return np.hstack([a, np.ones((a.shape[0], 1))])


@dataclass
class EncoderWeights:
    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.asarray(W, dtype=np.float64) for W in self.layers]
        for W in self.layers:
            if W.ndim != 2 or W.shape[0] < 2:
                raise ValueError("encoder layer must be [d_in + 1, d_out], got %s" % (W.shape,))
        for lo, hi in zip(self.layers, self.layers[1:]):
            if lo.shape[1] + 1 != hi.shape[0]:
                raise ValueError("layer shapes do not chain: %s then %s" % (lo.shape, hi.shape))
        if not all(np.all(np.isfinite(W)) for W in self.layers):
            raise ValueError("encoder weights must be finite")

    @property
    def layer_sizes(self) -> list[int]:
        if not self.layers:
            return []
        return [self.layers[0].shape[0] - 1] + [W.shape[1] for W in self.layers]

    @property
    def d(self) -> int:
        return self.layers[0].shape[0] - 1

    @property
    def H(self) -> int:
        return self.layers[-1].shape[1]

    def copy(self) -> "EncoderWeights":
        return EncoderWeights([W.copy() for W in self.layers])

    @classmethod
    def random(cls, layer_sizes, rng: np.random.Generator, scale: float | None = None):
        """Gaussian init; default scale is ``1/sqrt(fan_in)``, biases zero."""
        layers = []
        for d_in, d_out in zip(layer_sizes, layer_sizes[1:]):
            s = scale if scale is not None else 1.0 / np.sqrt(d_in)
            W = np.zeros((d_in + 1, d_out))
            W[:-1] = rng.normal(0.0, s, size=(d_in, d_out))
            layers.append(W)
        return cls(layers)


@dataclass
class TopLayer:
    W: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[1] != self.c.shape[0]:
            raise ValueError("top layer W %s and c %s disagree on K" % (self.W.shape, self.c.shape))
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.c))):
            raise ValueError("top layer parameters must be finite")

    @property
    def H(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "TopLayer":
        return TopLayer(self.W.copy(), self.c.copy())


@dataclass
class ForwardTrace:
    """Per-layer post-logistic activations (last one is the code ``h``) and
    the top-layer prediction. Arrays are 1-d for a single frame and 2-d for
    a ``[T, d]`` batch."""

    activations: list[np.ndarray]
    prediction: np.ndarray

    @property
    def h(self) -> np.ndarray:
        return self.activations[-1]


def _check_input(x: np.ndarray, omega: EncoderWeights) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != omega.d:
        raise ValueError("input dimension %s does not match encoder input d=%d"
                         % (x.shape, omega.d))
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def encode(frames: np.ndarray, omega: EncoderWeights) -> list[np.ndarray]:
    """Activations of every encoder layer for one frame or a batch of frames."""
    a = _check_input(frames, omega)
    acts = []
    for W in omega.layers:
        a = logistic(augment(a) @ W)
        acts.append(a)
    return acts


def top_predict(h: np.ndarray, top: TopLayer) -> np.ndarray:
    return h @ top.W + top.c


def nn_forward(frame: np.ndarray, omega: EncoderWeights, top: TopLayer) -> ForwardTrace:
    acts = encode(frame, omega)
    if acts[-1].shape[-1] != top.H:
        raise ValueError("encoder output width %d does not match top layer H=%d"
                         % (acts[-1].shape[-1], top.H))
    return ForwardTrace(acts, top_predict(acts[-1], top))


def frame_loss(prediction: np.ndarray, label: int) -> float:
    """Squared Euclidean distance between ``prediction`` and ``onehot(label)``."""
    prediction = np.asarray(prediction, dtype=np.float64)
    if not 0 <= label < prediction.shape[0]:
        raise ValueError("label %r out of range for K=%d" % (label, prediction.shape[0]))
    r = prediction.copy()
    r[label] -= 1.0
    return float(r @ r)


def backprop_frames(frames, labels, extra_code_grad, lam1, omega: EncoderWeights, top: TopLayer,
                    trace: ForwardTrace | None = None):
    """Loss gradients summed over a batch of frames.

    The differentiated quantity is::

        (lam1 / 2) * sum_t ||W^T h_t + c - onehot(y_t)||^2 + sum_t <extra_code_grad_t, h_t>

    ``extra_code_grad`` (``[T, H]`` or None) is an externally computed
    ``d loss / d h`` that is pushed through the encoder together with the
    squared-error signal. Returns ``(omega_grads, gW, gc)``.
    """
    frames = _check_input(frames, omega)
    if frames.ndim == 1:
        frames = frames[None, :]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != frames.shape[0]:
        raise ValueError("%d frames but %d labels" % (frames.shape[0], labels.shape[0]))
    if trace is None:
        trace = nn_forward(frames, omega, top)
    acts = trace.activations
    h = acts[-1]
    if h.shape[1] != top.H:
        raise ValueError("encoder output width %d does not match top layer H=%d" % (h.shape[1], top.H))

    dpred = lam1 * (trace.prediction - onehot_rows(labels, top.K))
    gW = h.T @ dpred
    gc = dpred.sum(axis=0)
    dh = dpred @ top.W.T
    if extra_code_grad is not None:
        extra = np.asarray(extra_code_grad, dtype=np.float64).reshape(h.shape)
        dh = dh + extra

    grads = [None] * len(omega.layers)
    da = dh
    for l in range(len(omega.layers) - 1, -1, -1):
        a = acts[l]
        delta = da * a * (1.0 - a)
        prev = acts[l - 1] if l > 0 else frames
        grads[l] = augment(prev).T @ delta
        if l > 0:
            da = delta @ omega.layers[l][:-1].T
    return grads, gW, gc


def backprop_frame(frame, label, extra_code_grad, lam1, omega, top):
    """Single-frame form of :func:`backprop_frames`."""
    frame = np.asarray(frame, dtype=np.float64)
    extra = None if extra_code_grad is None else np.asarray(extra_code_grad)[None, :]
    return backprop_frames(frame[None, :], [label], extra, lam1, omega, top)


def l1_subgrad(omega: EncoderWeights, lam3: float) -> list[np.ndarray]:
    """``lam3 * sign(W_l)`` for every encoder layer, with ``sign(0) = 0``."""
    if lam3 < 0:
        raise ValueError("lam3 must be non-negative")
    return [lam3 * np.sign(W) for W in omega.layers]


def l1_norm(omega: EncoderWeights) -> float:
    return float(sum(np.abs(W).sum() for W in omega.layers))
