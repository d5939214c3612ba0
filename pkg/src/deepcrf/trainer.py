"""Objective, staged training pipeline, evaluation and cross-validation.

Training runs in three stages:

1. greedy RBM pretraining of the encoder (optional),
2. independent per-frame fitting of encoder and top layer with the
   squared-error predictor, ignoring label context (optional),
3. online epochs: structured-perceptron updates on the CRF parameters for
   sequences whose decoded labeling is wrong, and SGD on the encoder.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import crf as crf_ops
from .config import TrainConfig
from .core import Dataset, FoldAssignment, LabelAlphabet, onehot_rows, split_folds
from .crf import CrfParams, emission_logits, forward_backward, sequence_score, viterbi
from .nn import EncoderWeights, TopLayer, backprop_frames, l1_norm, l1_subgrad, nn_forward
from .rbm import PretrainReport, greedy_pretrain

log = logging.getLogger(__name__)


@dataclass
class ModelState:
    omega: EncoderWeights
    theta: CrfParams
    alphabet: LabelAlphabet
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.omega.H != self.theta.W.shape[0]:
            raise ValueError("encoder width %d does not match W rows %d"
                             % (self.omega.H, self.theta.W.shape[0]))
        if self.alphabet.K != self.theta.K:
            raise ValueError("alphabet has K=%d, CRF has K=%d" % (self.alphabet.K, self.theta.K))

    @property
    def top(self) -> TopLayer:
        return self.theta.top

    @property
    def layer_sizes(self) -> list[int]:
        return self.omega.layer_sizes

    def copy(self) -> "ModelState":
        return ModelState(self.omega.copy(), self.theta.copy(), self.alphabet, self.config)

    def check_compatible(self, dataset: Dataset):
        if dataset.d != self.omega.d:
            raise ValueError("dataset has d=%d, model expects d=%d" % (dataset.d, self.omega.d))
        if dataset.alphabet.labels != self.alphabet.labels:
            raise ValueError("dataset alphabet differs from the model alphabet")


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    train_error: float
    violations: int


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def __len__(self):
        return len(self.records)


def init_model(dataset: Dataset, config: TrainConfig, omega: EncoderWeights | None = None) -> ModelState:
    """Random encoder (unless given), Gaussian ``W``, all other CRF parameters zero."""
    if omega is None:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
        omega = EncoderWeights.random([dataset.d, *config.layers], rng)
    K = dataset.K
    theta = CrfParams.zeros(omega.H, K)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))
    theta.top.W[:] = rng.normal(0.0, 1.0, size=(omega.H, K)) * config.w_init_scale
    return ModelState(omega, theta, dataset.alphabet, config)


def step_size(base: float, epoch_index: int, decay: float = 0.01) -> float:
    if base <= 0:
        raise ValueError("base step must be positive")
    return base / (1.0 + epoch_index * decay)


# -- objective ---------------------------------------------------------------

def _sequence_terms(seq, model: ModelState, lam1: float):
    trace = nn_forward(seq.frames, model.omega, model.top)
    E = emission_logits(trace.h, model.theta, lam1)
    return trace, E


def objective_value(dataset: Dataset, model: ModelState, config: TrainConfig) -> float:
    """Negative log-likelihood plus weighted squared error and regularizers."""
    if dataset.N:
        model.check_compatible(dataset)
    lam1 = config.lambda1
    total = 0.0
    for seq in dataset:
        trace, E = _sequence_terms(seq, model, lam1)
        post = forward_backward(E, model.theta)
        total += post.log_Z - sequence_score(E, seq.labels, model.theta)
        r = trace.prediction - onehot_rows(seq.labels, dataset.K)
        total += 0.5 * lam1 * float((r * r).sum())
    total += config.lambda2 * model.theta.sq_norm()
    total += config.lambda3 * l1_norm(model.omega)
    return total


@dataclass
class ObjectiveGradient:
    """Descent gradient of :func:`objective_value`."""

    theta: dict[str, np.ndarray]
    omega: list[np.ndarray]


def objective_gradient(dataset: Dataset, model: ModelState, config: TrainConfig) -> ObjectiveGradient:
    lam1 = config.lambda1
    theta_g = {k: np.zeros_like(v) for k, v in crf_ops.theta_arrays(model.theta).items()}
    omega_g = [np.zeros_like(W) for W in model.omega.layers]
    for seq in dataset:
        trace, E = _sequence_terms(seq, model, lam1)
        post = forward_backward(E, model.theta)
        resid = onehot_rows(seq.labels, dataset.K) - trace.prediction
        g = crf_ops.grad_theta_soft(trace.h, seq.labels, post, lam1, resid, model.theta)
        for name in theta_g:
            theta_g[name] -= getattr(g, name)
        gw, _, _ = backprop_frames(seq.frames, seq.labels, -g.code, lam1, model.omega, model.top, trace)
        for acc, part in zip(omega_g, gw):
            acc += part
    if config.lambda2:
        for name, p in crf_ops.theta_arrays(model.theta).items():
            theta_g[name] += 2.0 * config.lambda2 * p
    for acc, part in zip(omega_g, l1_subgrad(model.omega, config.lambda3)):
        acc += part
    return ObjectiveGradient(theta_g, omega_g)


# -- independent per-frame stage ---------------------------------------------

def _independent_objective(frames, labels, model, lam1, lam3, K):
    # with lam1 = 0 the data term keeps unit weight so the stage still fits frames
    w = lam1 if lam1 > 0 else 1.0
    trace = nn_forward(frames, model.omega, model.top)
    r = trace.prediction - onehot_rows(labels, K)
    return 0.5 * w * float((r * r).sum()) + lam3 * l1_norm(model.omega)


def independent_pretrain(dataset: Dataset, model: ModelState, config: TrainConfig,
                         history: list | None = None) -> ModelState:
    """Fit encoder and top layer (``W``, ``c``) to per-frame one-hot targets.

    Minimizes ``(lam1/2) * sum ||yhat - y||^2 + lam3 * ||omega||_1`` with
    shuffled mini-batch steps using per-parameter adaptive step sizes (Adam
    moments). The objective is divided by ``lam1 * M`` (``M`` frames) so
    ``ind_lr`` does not depend on the dataset size. An epoch that raises the
    stage objective is rolled back and retried at half the rate with fresh
    moments, so the recorded objective never increases.
    """
    model = model.copy()
    if config.ind_epochs == 0 or dataset.N == 0:
        return model
    model.check_compatible(dataset)
    X = dataset.all_frames()
    Y = dataset.all_labels()
    M, K = X.shape[0], dataset.K
    lam1, lam3 = config.lambda1, config.lambda3
    l1_w = lam3 / (M * (lam1 if lam1 > 0 else 1.0))
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    lr = config.ind_lr
    current = _independent_objective(X, Y, model, lam1, lam3, K)
    if history is not None:
        history.append(current)

    def params():
        return [*model.omega.layers, model.top.W, model.top.c]

    adam = _Adam(params())
    for epoch in range(config.ind_epochs):
        saved = (model.omega.copy(), model.top.copy())
        order = rng.permutation(M)
        for start in range(0, M, config.ind_batch):
            idx = order[start:start + config.ind_batch]
            gw, gW, gc = backprop_frames(X[idx], Y[idx], None, 1.0, model.omega, model.top)
            signs = l1_subgrad(model.omega, l1_w)
            grads = [g / len(idx) + s for g, s in zip(gw, signs)]
            grads += [gW / len(idx), gc / len(idx)]
            adam.step(params(), grads, lr)
        value = _independent_objective(X, Y, model, lam1, lam3, K)
        if not np.isfinite(value) or value > current:
            model.omega, model.theta.top = saved
            adam = _Adam(params())
            lr *= 0.5
            log.debug("independent stage epoch %d rolled back, lr -> %g", epoch, lr)
        else:
            current = value
        if history is not None:
            history.append(current)
    return model


class _Adam:
    """Per-parameter step sizes from running gradient moments."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def frame_predictions(dataset: Dataset, model: ModelState) -> list[np.ndarray]:
    """Per-frame argmax of the independent predictor, one array per sequence."""
    return [np.argmax(nn_forward(s.frames, model.omega, model.top).prediction, axis=1)
            for s in dataset]


def frame_error(dataset: Dataset, decoded) -> float:
    total = dataset.n_frames
    if total == 0:
        return 0.0
    wrong = sum(int(np.sum(np.asarray(p) != s.labels)) for s, p in zip(dataset, decoded))
    return wrong / total


# -- online stage ------------------------------------------------------------

def online_epoch(dataset: Dataset, model: ModelState, config: TrainConfig,
                 epoch_index: int) -> tuple[ModelState, EpochRecord]:
    """One shuffled online pass.

    For a sequence decoded wrongly, the CRF parameters move along the
    gradient of ``score(y) - score(y*)`` and the matching code gradient is
    backpropagated into the encoder. The squared-error and l1 terms are
    applied on every sequence.
    """
    model = model.copy()
    if dataset.N:
        model.check_compatible(dataset)
    lam1, lam2, lam3 = config.lambda1, config.lambda2, config.lambda3
    eta_theta = step_size(config.step_theta, epoch_index, config.decay)
    eta_omega = step_size(config.step_omega, epoch_index, config.decay)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2, epoch_index]))
    theta, omega = model.theta, model.omega
    violations = 0

    for i in rng.permutation(dataset.N):
        seq = dataset[int(i)]
        trace = nn_forward(seq.frames, omega, theta.top)
        h = trace.h
        E = emission_logits(h, theta, lam1)
        y_star, _ = viterbi(E, theta)
        violated = bool(np.any(y_star != seq.labels))

        code_grad = None
        hard = None
        if violated:
            violations += 1
            hard = crf_ops.grad_theta_hard(h, seq.labels, y_star, lam1, theta)
            if config.soft_encoder_grad:
                post = forward_backward(E, theta)
                code_grad = -crf_ops.grad_theta_soft(h, seq.labels, post, lam1, None, theta).code
            else:
                code_grad = -hard.code
        if config.freeze_encoder:
            g_omega = None
            if lam1:
                _, gW_sq, gc_sq = backprop_frames(seq.frames, seq.labels, None, lam1, omega, theta.top, trace)
            else:
                gW_sq = gc_sq = None
        else:
            g_omega, gW_sq, gc_sq = backprop_frames(seq.frames, seq.labels, code_grad, lam1,
                                                    omega, theta.top, trace)
        if lam2:
            shrink = {k: 2.0 * lam2 * v.copy() for k, v in crf_ops.theta_arrays(theta).items()}

        if hard is not None:
            crf_ops.apply_theta_step(theta, hard, eta_theta)
        if gW_sq is not None and lam1:
            theta.top.W -= eta_theta * gW_sq
            theta.top.c -= eta_theta * gc_sq
        if lam2:
            for name, arr in crf_ops.theta_arrays(theta).items():
                arr -= eta_theta * shrink[name]
        if g_omega is not None:
            for W, g, s in zip(omega.layers, g_omega, l1_subgrad(omega, lam3)):
                W -= eta_omega * (g + s)

    objective, train_err = _epoch_summary(dataset, model, config)
    return model, EpochRecord(epoch_index, objective, train_err, violations)


def _epoch_summary(dataset, model, config):
    lam1 = config.lambda1
    total, wrong, frames = 0.0, 0, 0
    for seq in dataset:
        trace, E = _sequence_terms(seq, model, lam1)
        post = forward_backward(E, model.theta)
        total += post.log_Z - sequence_score(E, seq.labels, model.theta)
        r = trace.prediction - onehot_rows(seq.labels, dataset.K)
        total += 0.5 * lam1 * float((r * r).sum())
        y_star, _ = viterbi(E, model.theta)
        wrong += int(np.sum(y_star != seq.labels))
        frames += seq.T
    total += config.lambda2 * model.theta.sq_norm() + config.lambda3 * l1_norm(model.omega)
    return total, (wrong / frames if frames else 0.0)


# -- evaluation and pipeline -------------------------------------------------

def decode(dataset: Dataset, model: ModelState, config: TrainConfig | None = None) -> list[np.ndarray]:
    lam1 = (config or model.config).lambda1
    out = []
    for seq in dataset:
        _, E = _sequence_terms(seq, model, lam1)
        out.append(viterbi(E, model.theta)[0])
    return out


def evaluate(dataset: Dataset, model: ModelState, config: TrainConfig | None = None):
    """Viterbi-decode every sequence; returns ``(frame_error_rate, decoded)``."""
    if dataset.N:
        model.check_compatible(dataset)
    decoded = decode(dataset, model, config)
    return frame_error(dataset, decoded), decoded


@dataclass
class TrainResult:
    model: ModelState
    log: TrainLog
    pretrain: PretrainReport | None = None
    independent_history: list[float] = field(default_factory=list)
    independent_model: ModelState | None = None


def train(dataset: Dataset, config: TrainConfig, callback=None) -> TrainResult:
    """Full pipeline: RBM pretraining, independent stage, online epochs."""
    if dataset.N == 0:
        raise ValueError("cannot train on an empty dataset")
    report = None
    omega = None
    if config.use_rbm and config.rbm_epochs > 0:
        omega, report = greedy_pretrain(dataset.all_frames(), [dataset.d, *config.layers],
                                        config.rbm_epochs, config.rbm_lr, config.rbm_batch,
                                        seed=config.seed)
    model = init_model(dataset, config, omega)
    history: list[float] = []
    if config.use_independent:
        model = independent_pretrain(dataset, model, config, history)
    independent_model = model
    train_log = TrainLog()
    for epoch in range(config.epochs):
        model, record = online_epoch(dataset, model, config, epoch)
        train_log.records.append(record)
        log.info("epoch %d objective %.4f train_error %.4f violations %d",
                 record.epoch, record.objective, record.train_error, record.violations)
        if callback is not None:
            callback(record)
    return TrainResult(model, train_log, report, history, independent_model)


@dataclass
class CVResult:
    fold_errors: list[float]
    baseline_errors: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_errors))

    @property
    def baseline_mean(self) -> float:
        return float(np.mean(self.baseline_errors))


def cross_validate(dataset: Dataset, k: int, config: TrainConfig, seed: int,
                   folds: FoldAssignment | None = None) -> CVResult:
    """Train on ``k - 1`` folds, evaluate on the held-out one, for every fold.

    ``baseline_errors`` holds the frame error of the per-frame argmax of the
    independently trained predictor (after stage 2, before online epochs).
    """
    if folds is None:
        folds = split_folds(dataset, k, seed)
    errors, baselines = [], []
    for fold in range(folds.k):
        train_set, test_set = folds.train_test(dataset, fold)
        result = train(train_set, config)
        errors.append(evaluate(test_set, result.model, config)[0])
        baselines.append(frame_error(test_set, frame_predictions(test_set, result.independent_model)))
        log.info("fold %d error %.4f baseline %.4f", fold, errors[-1], baselines[-1])
    return CVResult(errors, baselines)
