"""Prior-weighted logistic-regression calibration and greedy system fusion.

Bonafide is the target class. With effective prior p and fused score
f = w.s + b + logit(p), the calibration objective is

    p / N_bona * sum_bona log(1 + e^-f) + (1 - p) / N_spoof * sum_spoof log(1 + e^f)

and w.s + b is then a log-likelihood ratio.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .validation import check_binary_keys, check_score_matrix

PA_PRIOR = 0.672
LA_PRIOR = 0.707


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    effective_prior: float = PA_PRIOR
    max_iterations: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.effective_prior < 1.0:
            raise ValueError("effective_prior must lie strictly between 0 and 1")
        if self.max_iterations < 1 or self.tol <= 0:
            raise ValueError("max_iterations must be >= 1 and tol positive")


@dataclass
class CalibrationModel:
    weights: np.ndarray
    bias: float
    objective_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("calibration parameters must be finite")


def _objective(theta, X, bona, prior):
    f = X @ theta + math.log(prior / (1.0 - prior))
    cb = prior / bona.sum()
    cs = (1.0 - prior) / (~bona).sum()
    loss = cb * np.logaddexp(0.0, -f[bona]).sum() + cs * np.logaddexp(0.0, f[~bona]).sum()
    return loss, f, cb, cs


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fit_calibration(score_matrix, keys, cfg: CalibrationConfig = CalibrationConfig()) -> CalibrationModel:
    """Damped Newton with Armijo backtracking from w = 0, b = 0.

    Stops once an iteration lowers the objective by less than ``cfg.tol``.
    ``objective_trace`` records the objective after every iteration
    (index 0 is the starting point) and is non-increasing by construction.
    """
    S, bona = check_score_matrix(score_matrix, keys)
    X = np.hstack([S, np.ones((S.shape[0], 1))])
    theta = np.zeros(X.shape[1])
    loss, f, cb, cs = _objective(theta, X, bona, cfg.effective_prior)
    trace = [loss]
    for _ in range(cfg.max_iterations):
        coef = np.where(bona, cb, cs)
        resid = np.where(bona, -cb * _sigmoid(-f), cs * _sigmoid(f))
        grad = X.T @ resid
        curv = coef * _sigmoid(f) * _sigmoid(-f)
        hess = (X * curv[:, None]).T @ X
        hess += np.eye(hess.shape[0]) * (1e-9 + 1e-9 * np.trace(hess))
        step = -np.linalg.solve(hess, grad)
        slope = float(grad @ step)
        alpha, accepted = 1.0, False
        while alpha > 1e-12:
            cand = theta + alpha * step
            new_loss, new_f, _, _ = _objective(cand, X, bona, cfg.effective_prior)
            if new_loss <= loss + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        decrease = loss - new_loss
        theta, loss, f = cand, new_loss, new_f
        trace.append(loss)
        if decrease < cfg.tol:
            break
    else:
        raise CalibrationError(f"no convergence after {cfg.max_iterations} iterations; objective {loss:.6g}")
    return CalibrationModel(theta[:-1], float(theta[-1]), trace)


def apply_calibration(model: CalibrationModel, scores) -> np.ndarray:
    """Fused log-likelihood-ratio scores w.s + b."""
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if S.ndim != 2 or S.shape[1] != model.weights.size:
        raise ValueError(f"score matrix has {S.shape[-1]} systems, calibration expects {model.weights.size}")
    return S @ model.weights + model.bias


@dataclass
class FusionPlan:
    systems: list
    step_metrics: list
    step_eers: list
    model: CalibrationModel
    metric: str = "min_tdcf"


def _metric_fn(metric: str, tdcf: metrics.TdcfParams):
    if metric == "min_tdcf":
        return lambda s, k: metrics.min_tdcf(s, k, tdcf)[0]
    if metric == "eer":
        return lambda s, k: metrics.eer(s, k)[0]
    raise ValueError(f"metric must be min_tdcf or eer, got {metric!r}")


def greedy_select(systems: dict, keys, cfg: CalibrationConfig = CalibrationConfig(), metric: str = "min_tdcf",
                  tdcf: metrics.TdcfParams = metrics.TdcfParams(), tol: float = 1e-4) -> FusionPlan:
    """Forward selection of systems, refitting calibration on dev at each step.

    ``systems`` maps a name to a dev score vector aligned with ``keys``.
    Candidates are visited in sorted-name order so ties resolve the same
    way every run. A candidate is added only if it lowers the dev metric
    by more than ``tol``.
    """
    if not systems:
        raise ValueError("need at least one system")
    names = sorted(systems)
    bona = check_binary_keys(keys)
    columns = {n: np.asarray(systems[n], dtype=np.float64) for n in names}
    for n, col in columns.items():
        if col.shape != bona.shape:
            raise ValueError(f"system {n!r} has {col.shape[0]} scores for {bona.shape[0]} trials")
    measure = _metric_fn(metric, tdcf)

    def evaluate(selection):
        S = np.column_stack([columns[n] for n in selection])
        model = fit_calibration(S, bona, cfg)
        fused = apply_calibration(model, S)
        return measure(fused, bona), metrics.eer(fused, bona)[0], model

    best = None
    for n in names:
        value, eer_value, model = evaluate([n])
        if best is None or value < best[0]:
            best = (value, eer_value, model, n)
    selected = [best[3]]
    step_metrics, step_eers, model = [best[0]], [best[1]], best[2]
    while len(selected) < len(names):
        candidate = None
        for n in names:
            if n in selected:
                continue
            value, eer_value, cand_model = evaluate(selected + [n])
            if candidate is None or value < candidate[0]:
                candidate = (value, eer_value, cand_model, n)
        if step_metrics[-1] - candidate[0] <= tol:
            break
        selected.append(candidate[3])
        step_metrics.append(candidate[0])
        step_eers.append(candidate[1])
        model = candidate[2]
    return FusionPlan(selected, step_metrics, step_eers, model, metric)


def write_fusion_report(path, plan: FusionPlan, prior: float) -> None:
    lines = [f"effective_prior = {prior!r}", f"metric = {plan.metric}"]
    for i, (name, value, e) in enumerate(zip(plan.systems, plan.step_metrics, plan.step_eers), 1):
        lines.append(f"step {i} system={name} {plan.metric}={value!r} eer={e!r}")
    lines.append("weights = " + " ".join(f"{n}:{w!r}" for n, w in zip(plan.systems, plan.model.weights)))
    lines.append(f"bias = {plan.model.bias!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_fusion_report(path) -> dict:
    out = {"steps": []}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("step "):
            fields = dict(tok.split("=", 1) for tok in line.split()[2:])
            out["steps"].append(fields)
        elif " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


class ScoreCalibrator(TransformerMixin, BaseEstimator):
    """Fit on (trials x systems, keys); transform to calibrated LLR scores."""

    def __init__(self, effective_prior=PA_PRIOR, max_iterations=100, tol=1e-6):
        self.effective_prior = effective_prior
        self.max_iterations = max_iterations
        self.tol = tol

    def fit(self, X, y):
        cfg = CalibrationConfig(self.effective_prior, self.max_iterations, self.tol)
        self.model_ = fit_calibration(X, y, cfg)
        self.coef_ = self.model_.weights
        self.intercept_ = self.model_.bias
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return apply_calibration(self.model_, X)


class GreedyFusion(BaseEstimator):
    """Greedy forward fusion over the columns of a trials x systems matrix."""

    def __init__(self, effective_prior=PA_PRIOR, metric="min_tdcf", tol=1e-4, tdcf_params=None):
        self.effective_prior = effective_prior
        self.metric = metric
        self.tol = tol
        self.tdcf_params = tdcf_params

    def fit(self, X, y, system_names=None):
        X = np.asarray(X, dtype=np.float64)
        X, _ = check_score_matrix(X, y)
        names = list(system_names) if system_names is not None else [f"sys{i}" for i in range(X.shape[1])]
        self.system_names_ = names
        self.plan_ = greedy_select({n: X[:, i] for i, n in enumerate(names)}, y,
                                   CalibrationConfig(self.effective_prior), self.metric,
                                   self.tdcf_params or metrics.TdcfParams(), self.tol)
        self.columns_ = [names.index(n) for n in self.plan_.systems]
        return self

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = np.asarray(X, dtype=np.float64)
        return apply_calibration(self.plan_.model, X[:, self.columns_])

