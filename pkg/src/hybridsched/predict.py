"""Per-stage performance models: ridge latency regressions, overhead means, output-size chaining."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.model_selection import GridSearchCV, KFold
from sklearn.utils.validation import check_is_fitted, check_X_y, validate_data

from .model import AppDag

MIN_ESTIMATE_MS = 1.0


class RankDeficientError(np.linalg.LinAlgError):
    """The (unregularised) normal equations are singular."""


@dataclass(frozen=True)
class LinearModel:
    """Weights for ``d`` features followed by the intercept."""

    weights: Tuple[float, ...]
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) < 1 or not all(math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be a non-empty vector of finite numbers")
        if self.lam < 0:
            raise ValueError("ridge penalty must be >= 0")

    @property
    def n_features(self) -> int:
        return len(self.weights) - 1

    @property
    def slope(self) -> Tuple[float, ...]:
        return self.weights[:-1]

    @property
    def intercept(self) -> float:
        return self.weights[-1]


def fit_ridge(X, y, lam: float = 0.0) -> LinearModel:
    """Solve ``min ||Xw + b - y||^2 + lam ||w||^2`` via the normal equations.

    The intercept column is appended and left unpenalised. At ``lam == 0`` a
    singular Gram matrix raises :class:`RankDeficientError`.
    """
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    gram = A.T @ A
    shift = np.full(d + 1, float(lam))
    shift[-1] = 0.0
    gram = gram + np.diag(shift)
    # a positive penalty makes the slope block definite; the intercept block is n > 0
    rank = np.linalg.matrix_rank(A) if lam == 0 else d + 1
    if rank < d + 1:
        raise RankDeficientError(
            f"normal equations have rank {rank} < {d + 1} (features are collinear with each other "
            f"or with the intercept); retry with a positive ridge penalty")
    w = np.linalg.solve(gram, A.T @ y)
    return LinearModel(tuple(w), float(lam))


def predict(m: LinearModel, features: Sequence[float]) -> float:
    x = np.asarray(features, dtype=np.float64).ravel()
    if x.shape[0] != m.n_features:
        raise ValueError(f"model expects {m.n_features} features, got {x.shape[0]}")
    return float(np.dot(m.slope, x) + m.intercept)


def fit_overhead(samples: Sequence[float]) -> float:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one overhead sample")
    return float(arr.mean())


def mape(actual: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.size == 0:
        raise ValueError("actual and predicted must be non-empty and equally long")
    if np.any(a == 0):
        raise ValueError("MAPE is undefined when an actual value is zero")
    return float(100.0 / a.size * np.sum(np.abs(a - p) / np.abs(a)))


class RidgeLatencyModel(RegressorMixin, BaseEstimator):
    """Ridge regression with an unpenalised intercept, usable inside sklearn pipelines.

    Parameters
    ----------
    alpha : float
        Ridge penalty on the slope weights.
    """

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        self.model_ = fit_ridge(X, y, self.alpha)
        self.coef_ = np.asarray(self.model_.slope)
        self.intercept_ = self.model_.intercept
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_ + self.intercept_


def select_ridge_penalty(X, y, grid: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0, 10.0),
                         folds: int = 5, seed: int = 0) -> LinearModel:
    """Grid-search the ridge penalty with shuffled k-fold CV, then refit on all data."""
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    folds = min(folds, X.shape[0])
    if folds < 2:
        return fit_ridge(X, y, max(grid))
    search = GridSearchCV(RidgeLatencyModel(), {"alpha": list(grid)},
                          cv=KFold(folds, shuffle=True, random_state=seed),
                          scoring="neg_mean_squared_error", error_score="raise")
    search.fit(X, y)
    return search.best_estimator_.model_


@dataclass(frozen=True)
class StageModels:
    private_latency: LinearModel
    public_latency: LinearModel
    overhead_ms: float = 0.0
    # one model per output feature; None on sink stages
    output_features: Optional[Tuple[LinearModel, ...]] = None

    def __post_init__(self):
        if not (math.isfinite(self.overhead_ms) and self.overhead_ms >= 0):
            raise ValueError("overhead must be finite and non-negative")
        if self.output_features is not None:
            object.__setattr__(self, "output_features", tuple(self.output_features))


class ModelConfigError(ValueError):
    pass


def stage_input_features(dag: AppDag, models: Sequence[StageModels],
                         input_features: Sequence[float]) -> List[Tuple[float, ...]]:
    """Propagate features through the DAG in topological order.

    Source stages see ``input_features``; other stages see the concatenated
    predicted outputs of their predecessors, ordered by predecessor id.
    """
    if len(models) != dag.stage_count:
        raise ModelConfigError(f"need models for {dag.stage_count} stages, got {len(models)}")
    feats: Dict[int, Tuple[float, ...]] = {}
    outputs: Dict[int, Tuple[float, ...]] = {}
    for k in dag.topological_order():
        preds = dag.predecessors(k)
        if not preds:
            feats[k] = tuple(float(x) for x in input_features)
        else:
            feats[k] = tuple(x for p in sorted(preds) for x in outputs[p])
        if dag.successors(k):
            out_models = models[k].output_features
            if not out_models:
                raise ModelConfigError(f"stage {dag.names[k]} has successors but no output-feature model")
            outputs[k] = tuple(predict(m, feats[k]) for m in out_models)
    return [feats[k] for k in dag.stages]


def chain_predict(dag: AppDag, models: Sequence[StageModels],
                  input_features: Sequence[float]) -> List[Tuple[float, float]]:
    """Per-stage ``(p_private, p_public)`` estimates for one job, floored at 1 ms."""
    feats = stage_input_features(dag, models, input_features)
    out = []
    for k in dag.stages:
        m = models[k]
        p_priv = predict(m.private_latency, feats[k]) + m.overhead_ms
        p_pub = predict(m.public_latency, feats[k])
        out.append((max(p_priv, MIN_ESTIMATE_MS), max(p_pub, MIN_ESTIMATE_MS)))
    return out


@dataclass(frozen=True)
class TraceRow:
    job_id: int
    stage: int
    location: str
    features: Tuple[float, ...]
    latency_ms: float
    output_features: Tuple[float, ...] = ()
    overhead_ms: Optional[float] = None


def fit_stage_models(dag: AppDag, rows: Sequence[TraceRow], lam: float = 1.0,
                     grid: Optional[Sequence[float]] = None, seed: int = 0
                     ) -> Tuple[List[StageModels], Dict[str, float]]:
    """Fit every stage's models from a long-format trace.

    Private rows carrying ``overhead_ms`` have it subtracted before the compute
    model is fitted; the overhead constant is its mean. Returns the models and
    an in-sample MAPE report keyed ``"<stage>.<private|public|output_i>"``.
    """
    fitter = (lambda X, y: select_ridge_penalty(X, y, grid, seed=seed)) if grid else \
        (lambda X, y: fit_ridge(X, y, lam))
    models: List[StageModels] = []
    report: Dict[str, float] = {}
    for k in dag.stages:
        name = dag.names[k]
        fitted = {}
        overhead = 0.0
        for loc in ("private", "public"):
            sub = [r for r in rows if r.stage == k and r.location == loc]
            if not sub:
                raise ModelConfigError(f"no {loc} trace rows for stage {name}")
            X = np.array([r.features for r in sub], dtype=np.float64)
            y = np.array([r.latency_ms for r in sub], dtype=np.float64)
            if loc == "private":
                over = [r.overhead_ms for r in sub if r.overhead_ms is not None]
                if over:
                    overhead = fit_overhead(over)
                    y = y - np.array([r.overhead_ms or 0.0 for r in sub])
            fitted[loc] = fitter(X, y)
            pred = X @ np.array(fitted[loc].slope) + fitted[loc].intercept
            if loc == "private":
                pred, y = pred + overhead, y + np.array([r.overhead_ms or 0.0 for r in sub])
            report[f"{name}.{loc}"] = mape(y, pred)
        out_models = None
        if dag.successors(k):
            sub = [r for r in rows if r.stage == k and r.output_features]
            if not sub:
                raise ModelConfigError(f"stage {name} has successors but the trace has no output features")
            X = np.array([r.features for r in sub], dtype=np.float64)
            Y = np.array([r.output_features for r in sub], dtype=np.float64)
            out_models = []
            for i in range(Y.shape[1]):
                m = fitter(X, Y[:, i])
                out_models.append(m)
                if np.all(Y[:, i] != 0):
                    report[f"{name}.output_{i}"] = mape(Y[:, i], X @ np.array(m.slope) + m.intercept)
        models.append(StageModels(fitted["private"], fitted["public"], overhead,
                                  tuple(out_models) if out_models else None))
    return models, report


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def dump_models(dag: AppDag, models: Sequence[StageModels]) -> str:
    """Flat ``key = value`` text, one number per line; floats round-trip exactly."""
    lines = [f"stages = {dag.stage_count}"]
    for k, m in enumerate(models):
        pre = f"stage.{k}"
        lines.append(f"{pre}.overhead_ms = {_fmt(m.overhead_ms)}")
        for loc, lm in (("private", m.private_latency), ("public", m.public_latency)):
            lines.append(f"{pre}.{loc}.lambda = {_fmt(lm.lam)}")
            for i, w in enumerate(lm.weights):
                lines.append(f"{pre}.{loc}.w.{i} = {_fmt(w)}")
        for o, lm in enumerate(m.output_features or ()):
            lines.append(f"{pre}.output.{o}.lambda = {_fmt(lm.lam)}")
            for i, w in enumerate(lm.weights):
                lines.append(f"{pre}.output.{o}.w.{i} = {_fmt(w)}")
    return "\n".join(lines) + "\n"


def load_models(text: str) -> List[StageModels]:
    kv: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        kv[key] = value

    def linear(prefix: str) -> LinearModel:
        ws, i = [], 0
        while f"{prefix}.w.{i}" in kv:
            ws.append(float(kv[f"{prefix}.w.{i}"]))
            i += 1
        if not ws:
            raise ValueError(f"missing weights for {prefix}")
        return LinearModel(tuple(ws), float(kv.get(f"{prefix}.lambda", "0")))

    models = []
    for k in range(int(kv["stages"])):
        pre = f"stage.{k}"
        outs, o = [], 0
        while f"{pre}.output.{o}.w.0" in kv:
            outs.append(linear(f"{pre}.output.{o}"))
            o += 1
        models.append(StageModels(linear(f"{pre}.private"), linear(f"{pre}.public"),
                                  float(kv[f"{pre}.overhead_ms"]), tuple(outs) if outs else None))
    return models
