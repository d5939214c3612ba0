"""Finite-difference verification of every analytic gradient.

Relative error for one entry is ``|a - n| / max(|a|, |n|, floor)`` with
``floor = 1e-6``, so entries whose true gradient is essentially zero are
judged on absolute error. Encoder weights within ``1e-8`` of zero are
skipped for the l1 term's kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core import Dataset, LabelAlphabet, LabeledSequence, onehot_rows
from .crf import CrfParams, theta_arrays
from .nn import EncoderWeights, TopLayer, backprop_frames, nn_forward
from .trainer import ModelState, objective_gradient, objective_value

GROUPS = ("A", "pi", "tau", "b", "W", "c", "omega")
FD_STEP = 1e-5
TOLERANCE = 1e-4
REL_FLOOR = 1e-6
KINK = 1e-8


def relative_error(analytic, numeric, floor=REL_FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def central_difference(f, arr: np.ndarray, step=FD_STEP, skip=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr``
    (perturbed in place and restored). Entries where ``skip`` is true get NaN."""
    out = np.full(arr.shape, np.nan)
    for idx in np.ndindex(arr.shape):
        if skip is not None and skip[idx]:
            continue
        orig = arr[idx]
        arr[idx] = orig + step
        fp = f()
        arr[idx] = orig - step
        fm = f()
        arr[idx] = orig
        out[idx] = (fp - fm) / (2.0 * step)
    return out


def random_instance(seed, layer_sizes=(5, 4, 3), K=3, T=4, n_seq=2, weight_scale=1.0):
    rng = np.random.default_rng(seed)
    d, H = layer_sizes[0], layer_sizes[-1]
    alphabet = LabelAlphabet(tuple("l%d" % k for k in range(K)))
    seqs = tuple(LabeledSequence(rng.normal(size=(T, d)), rng.integers(0, K, size=T), "g%d" % i)
                 for i in range(n_seq))
    omega = EncoderWeights([rng.normal(0.0, weight_scale, size=(a + 1, b))
                            for a, b in zip(layer_sizes, layer_sizes[1:])])
    theta = CrfParams(rng.normal(size=(K, K)), rng.normal(size=K), rng.normal(size=K),
                      rng.normal(size=K), TopLayer(rng.normal(size=(H, K)), rng.normal(size=K)))
    return Dataset(seqs, alphabet, d), ModelState(omega, theta, alphabet)


@dataclass
class GradcheckReport:
    worst: dict[str, float] = field(default_factory=lambda: {g: 0.0 for g in GROUPS})
    checked: dict[str, int] = field(default_factory=lambda: {g: 0 for g in GROUPS})
    tolerance: float = TOLERANCE

    def update(self, group, errors):
        errors = np.asarray(errors)
        errors = errors[~np.isnan(errors)]
        if errors.size:
            self.worst[group] = max(self.worst[group], float(errors.max()))
            self.checked[group] += int(errors.size)

    def failures(self) -> list[str]:
        return [g for g in GROUPS if self.worst[g] > self.tolerance or self.checked[g] == 0]

    @property
    def ok(self) -> bool:
        return not self.failures()

    def table(self) -> str:
        lines = ["%-6s %10s %8s  %s" % ("group", "worst_rel", "entries", "status")]
        for g in GROUPS:
            status = "ok" if g not in self.failures() else "FAIL"
            lines.append("%-6s %10.3e %8d  %s" % (g, self.worst[g], self.checked[g], status))
        return "\n".join(lines)


def check_objective(dataset, model, config, report, break_sign=None):
    """Analytic gradient of the full objective against central differences."""
    grad = objective_gradient(dataset, model, config)
    f = lambda: objective_value(dataset, model, config)
    for name, arr in theta_arrays(model.theta).items():
        analytic = -grad.theta[name] if name == break_sign else grad.theta[name]
        report.update(name, relative_error(analytic, central_difference(f, arr)))
    for W, g in zip(model.omega.layers, grad.omega):
        analytic = -g if break_sign == "omega" else g
        skip = np.abs(W) < KINK if config.lambda3 else None
        numeric = central_difference(f, W, skip=skip)
        report.update("omega", np.where(np.isnan(numeric), np.nan, relative_error(analytic, numeric)))


def check_backprop(dataset, model, lam1, report, seed, break_sign=None):
    """``backprop_frames`` alone, with a random injected code gradient."""
    rng = np.random.default_rng(seed + 7919)
    seq = dataset[0]
    extra = rng.normal(size=(seq.T, model.omega.H))
    K = model.theta.K

    def f():
        tr = nn_forward(seq.frames, model.omega, model.top)
        r = tr.prediction - onehot_rows(seq.labels, K)
        return 0.5 * lam1 * float((r * r).sum()) + float((extra * tr.h).sum())

    gw, gW, gc = backprop_frames(seq.frames, seq.labels, extra, lam1, model.omega, model.top)
    for W, g in zip(model.omega.layers, gw):
        report.update("omega", relative_error(-g if break_sign == "omega" else g, central_difference(f, W)))
    report.update("W", relative_error(-gW if break_sign == "W" else gW, central_difference(f, model.top.W)))
    report.update("c", relative_error(-gc if break_sign == "c" else gc, central_difference(f, model.top.c)))


def run_gradcheck(seeds=range(5), lambda2_values=(0.0, 0.01), lambda1=0.1, lambda3=2e-4,
                  layer_sizes=(5, 4, 3), K=3, T=4, break_sign=None) -> GradcheckReport:
    if break_sign is not None and break_sign not in GROUPS:
        raise ValueError("unknown gradient group %r" % break_sign)
    report = GradcheckReport()
    for seed in seeds:
        for lam2 in lambda2_values:
            dataset, model = random_instance(seed, layer_sizes, K, T)
            config = TrainConfig(lambda1=lambda1, lambda2=lam2, lambda3=lambda3,
                                 layers=tuple(layer_sizes[1:]))
            check_objective(dataset, model, config, report, break_sign)
        check_backprop(dataset, model, lambda1, report, seed, break_sign)
    return report
