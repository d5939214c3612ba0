"""Linear-chain CRF on top of encoder codes.

Log-emissions for frame ``t`` are ``h_t W + b + lam1 * (h_t W + c)``, so the
shared top layer contributes both through the CRF data term and through the
independent frame predictor. The score of a labeling is::

    pi[y_1] + tau[y_T] + sum_t E[t, y_t] + sum_{t>=2} A[y_{t-1}, y_t]

All chain recursions run in the log domain. Gradients returned by this
module are ascent directions on the log-likelihood (or on the score gap for
the hard variant); callers pick the orientation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import onehot_rows
from .nn import TopLayer


@dataclass
class CrfParams:
    A: np.ndarray
    b: np.ndarray
    pi: np.ndarray
    tau: np.ndarray
    top: TopLayer

    def __post_init__(self):
        K = self.top.K
        self.A = np.asarray(self.A, dtype=np.float64)
        for name in ("b", "pi", "tau"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        if self.A.shape != (K, K):
            raise ValueError("transition matrix must be %dx%d, got %s" % (K, K, self.A.shape))
        for name in ("b", "pi", "tau"):
            if getattr(self, name).shape != (K,):
                raise ValueError("%s must have length K=%d" % (name, K))
        for arr in (self.A, self.b, self.pi, self.tau):
            if not np.all(np.isfinite(arr)):
                raise ValueError("CRF parameters must be finite")

    @property
    def K(self) -> int:
        return self.top.K

    @property
    def W(self) -> np.ndarray:
        return self.top.W

    @property
    def c(self) -> np.ndarray:
        return self.top.c

    @classmethod
    def zeros(cls, H: int, K: int) -> "CrfParams":
        return cls(np.zeros((K, K)), np.zeros(K), np.zeros(K), np.zeros(K),
                   TopLayer(np.zeros((H, K)), np.zeros(K)))

    def copy(self) -> "CrfParams":
        return CrfParams(self.A.copy(), self.b.copy(), self.pi.copy(), self.tau.copy(), self.top.copy())

    def sq_norm(self) -> float:
        """Squared l2 norm over A, W, pi, tau, b, c."""
        return float(sum((p * p).sum() for p in (self.A, self.W, self.pi, self.tau, self.b, self.c)))


@dataclass
class ThetaGrad:
    """Gradient over the CRF parameter groups plus ``d/dh`` per frame."""

    A: np.ndarray
    pi: np.ndarray
    tau: np.ndarray
    b: np.ndarray
    W: np.ndarray
    c: np.ndarray
    code: np.ndarray

    GROUPS = ("A", "pi", "tau", "b", "W", "c")

    def __iter__(self):
        return (getattr(self, name) for name in self.GROUPS)

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self) and not np.any(self.code)


@dataclass
class ChainPosteriors:
    log_alpha: np.ndarray
    log_beta: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray
    log_Z: float

    @property
    def T(self) -> int:
        return self.gamma.shape[0]

    def log_Z_backward(self, emissions: np.ndarray, theta: CrfParams) -> float:
        return float(logsumexp(theta.pi + emissions[0] + self.log_beta[0]))


def emission_logits(h_seq: np.ndarray, theta: CrfParams, lam1: float) -> np.ndarray:
    """Log-emission table ``[T, K]`` for codes ``h_seq`` (``[T, H]``)."""
    h_seq = np.asarray(h_seq, dtype=np.float64)
    if h_seq.ndim != 2 or h_seq.shape[1] != theta.W.shape[0]:
        raise ValueError("codes %s do not match W %s" % (h_seq.shape, theta.W.shape))
    if not np.all(np.isfinite(h_seq)):
        raise ValueError("codes contain non-finite values")
    hW = h_seq @ theta.W
    return hW + theta.b + lam1 * (hW + theta.c)


def _check_labels(y, T, K):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.shape[0] != T:
        raise ValueError("label sequence has length %d, expected %d" % (y.shape[0], T))
    if np.any(y < 0) or np.any(y >= K):
        raise ValueError("label index out of range for K=%d" % K)
    return y


def sequence_score(emissions: np.ndarray, y, theta: CrfParams) -> float:
    T, K = emissions.shape
    y = _check_labels(y, T, K)
    s = theta.pi[y[0]] + theta.tau[y[-1]] + emissions[np.arange(T), y].sum()
    if T > 1:
        s += theta.A[y[:-1], y[1:]].sum()
    return float(s)


def forward_backward(emissions: np.ndarray, theta: CrfParams) -> ChainPosteriors:
    emissions = np.asarray(emissions, dtype=np.float64)
    T, K = emissions.shape
    A = theta.A
    log_alpha = np.empty((T, K))
    log_beta = np.empty((T, K))
    log_alpha[0] = theta.pi + emissions[0]
    for t in range(1, T):
        log_alpha[t] = logsumexp(log_alpha[t - 1][:, None] + A, axis=0) + emissions[t]
    log_beta[T - 1] = theta.tau
    for t in range(T - 2, -1, -1):
        log_beta[t] = logsumexp(A + (emissions[t + 1] + log_beta[t + 1])[None, :], axis=1)
    log_Z = float(logsumexp(log_alpha[T - 1] + log_beta[T - 1]))

    gamma = np.exp(log_alpha + log_beta - log_Z)
    gamma /= gamma.sum(axis=1, keepdims=True)
    if T > 1:
        log_xi = (log_alpha[:-1, :, None] + A[None, :, :]
                  + (emissions[1:] + log_beta[1:])[:, None, :] - log_Z)
        xi = np.exp(log_xi)
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    else:
        xi = np.zeros((0, K, K))
    return ChainPosteriors(log_alpha, log_beta, gamma, xi, log_Z)


def log_likelihood(emissions: np.ndarray, y, theta: CrfParams) -> float:
    return sequence_score(emissions, y, theta) - forward_backward(emissions, theta).log_Z


def viterbi(emissions: np.ndarray, theta: CrfParams) -> tuple[np.ndarray, float]:
    """Highest-scoring labeling and its score.

    Ties resolve to the lowest label index at every backtrack decision.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    T, K = emissions.shape
    delta = theta.pi + emissions[0]
    back = np.zeros((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + theta.A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + emissions[t]
    y = np.empty(T, dtype=np.int64)
    y[-1] = int(np.argmax(delta + theta.tau))
    for t in range(T - 1, 0, -1):
        y[t - 1] = back[t, y[t]]
    return y, sequence_score(emissions, y, theta)


def _theta_grad(h_seq, y_onehot, q_unary, q_pair_sum, lam1, theta, residuals=None):
    diff = y_onehot - q_unary
    gW = (1.0 + lam1) * (h_seq.T @ diff)
    gc = lam1 * diff.sum(axis=0)
    if residuals is not None:
        gW = gW + lam1 * (h_seq.T @ residuals)
        gc = gc + lam1 * residuals.sum(axis=0)
    T = y_onehot.shape[0]
    obs_pairs = y_onehot[:-1].T @ y_onehot[1:] if T > 1 else np.zeros_like(theta.A)
    return ThetaGrad(
        A=obs_pairs - q_pair_sum,
        pi=diff[0].copy(),
        tau=diff[-1].copy(),
        b=diff.sum(axis=0),
        W=gW,
        c=gc,
        code=(1.0 + lam1) * diff @ theta.W.T,
    )


def grad_theta_soft(h_seq, y, post: ChainPosteriors, lam1: float, prediction_residuals,
                    theta: CrfParams) -> ThetaGrad:
    """Ascent gradient of ``log p(y | h) - (lam1/2) sum_t ||yhat_t - onehot(y_t)||^2``.

    ``prediction_residuals`` is ``onehot(y) - yhat`` per frame (``[T, K]``) or
    None to drop the squared-error part. ``code`` only carries the
    log-likelihood part; the squared-error path into ``h`` is handled by
    :func:`deepcrf.nn.backprop_frames`.
    """
    h_seq = np.asarray(h_seq, dtype=np.float64)
    T, K = post.gamma.shape
    if h_seq.shape != (T, theta.W.shape[0]):
        raise ValueError("codes %s do not match posteriors over %d frames" % (h_seq.shape, T))
    y = _check_labels(y, T, K)
    if prediction_residuals is not None:
        prediction_residuals = np.asarray(prediction_residuals, dtype=np.float64)
        if prediction_residuals.shape != (T, K):
            raise ValueError("residuals must be [T, K]")
    pair = post.xi.sum(axis=0) if T > 1 else np.zeros((K, K))
    return _theta_grad(h_seq, onehot_rows(y, K), post.gamma, pair, lam1, theta, prediction_residuals)


def grad_theta_hard(h_seq, y, y_star, lam1: float, theta: CrfParams) -> ThetaGrad:
    """Gradient of ``score(y) - score(y_star)`` with the emission-augmented score."""
    h_seq = np.asarray(h_seq, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    y_star = np.asarray(y_star, dtype=np.int64).reshape(-1)
    if y.shape != y_star.shape or h_seq.shape[0] != y.shape[0]:
        raise ValueError("gold labels, decoded labels and codes must share length")
    K = theta.K
    _check_labels(y, len(y), K)
    _check_labels(y_star, len(y), K)
    ys = onehot_rows(y_star, K)
    pair = ys[:-1].T @ ys[1:] if len(y) > 1 else np.zeros((K, K))
    return _theta_grad(h_seq, onehot_rows(y, K), ys, pair, lam1, theta)


def apply_theta_step(theta: CrfParams, grad: ThetaGrad, step: float) -> None:
    """In-place ``theta += step * grad`` over all six groups."""
    theta.A += step * grad.A
    theta.pi += step * grad.pi
    theta.tau += step * grad.tau
    theta.b += step * grad.b
    theta.top.W += step * grad.W
    theta.top.c += step * grad.c


def theta_arrays(theta: CrfParams) -> dict[str, np.ndarray]:
    """Live views of every CRF parameter group, keyed by group name."""
    return {"A": theta.A, "pi": theta.pi, "tau": theta.tau, "b": theta.b,
            "W": theta.top.W, "c": theta.top.c}
