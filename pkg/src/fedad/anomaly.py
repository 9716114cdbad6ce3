"""Anomaly scoring and evaluation.

Two scorers live here: the per-dimension Gaussian outlier probability used as
a baseline, and the Mahalanobis score of forecast error vectors used by the
federated detector. Thresholds are picked on validation scores by maximising
the precision-weighted F measure

    F_theta = (1 + theta^2) P R / (theta^2 P + R)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyData,
    LengthMismatch,
    ShapeMismatch,
    SingularCovariance,
    TooFewSamples,
)

VARIANCE_FLOOR = 1e-12
COV_RIDGE = 1e-6


@dataclass(frozen=True)
class GaussianBaseline:
    mu: np.ndarray
    sigma2: np.ndarray


def fit_gaussian_baseline(data) -> GaussianBaseline:
    """Per-dimension MLE mean and biased variance."""
    X = np.asarray(data, dtype=np.float64)
    if X.size == 0:
        raise EmptyData("no points to fit")
    if X.ndim == 1:
        X = X[:, None]
    mu = X.sum(axis=0) / X.shape[0]
    sigma2 = ((X - mu) ** 2).sum(axis=0) / X.shape[0]
    return GaussianBaseline(mu=mu, sigma2=np.maximum(sigma2, VARIANCE_FLOOR))


def gaussian_probability(x, g: GaussianBaseline):
    """Product of univariate normal densities; ``x`` may be one point or a stack."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != g.mu.shape[0]:
        raise DimensionMismatch(f"point has {x.shape[-1]} dims, model has {g.mu.shape[0]}")
    dens = np.exp(-((x - g.mu) ** 2) / (2.0 * g.sigma2)) / (np.sqrt(2.0 * np.pi) * np.sqrt(g.sigma2))
    return np.prod(dens, axis=-1)


def error_vector(prediction, actual) -> np.ndarray:
    """Row-major flattened ``|prediction - actual|``; stacks give one row per window."""
    prediction = np.asarray(prediction, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if prediction.shape != actual.shape:
        raise ShapeMismatch(f"prediction {prediction.shape} != actual {actual.shape}")
    diff = np.abs(prediction - actual)
    if diff.ndim == 3:
        return diff.reshape(diff.shape[0], -1)
    return diff.ravel()


def fit_anomaly_model(errors, diagonal: bool = False):
    """MLE mean and ridge-regularized covariance of error vectors.

    The ridge is ``1e-6 * trace(cov) / D`` (with a floor so an all-identical
    sample still yields a positive-definite matrix).
    """
    E = np.asarray(errors, dtype=np.float64)
    if E.ndim == 1:
        E = E[:, None]
    if E.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 error vectors, got {E.shape[0]}")
    mu = E.mean(axis=0)
    centered = E - mu
    cov = centered.T @ centered / E.shape[0]
    if diagonal:
        cov = np.diag(np.diag(cov))
    D = cov.shape[0]
    eps = max(COV_RIDGE * np.trace(cov) / D, VARIANCE_FLOOR)
    return mu, cov + eps * np.eye(D)


@dataclass
class AnomalyModel:
    mu: np.ndarray
    cov: np.ndarray
    threshold: float = 0.5
    theta: float = 0.05
    score_min: float = 0.0
    score_max: float = 1.0
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def cholesky(self):
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.cov)
            except np.linalg.LinAlgError as exc:
                raise SingularCovariance("covariance is not positive definite") from exc
        return self._chol

    def normalize(self, scores):
        return normalize_scores(scores, self.score_min, self.score_max)

    def to_dict(self) -> dict:
        return {
            "mu": self.mu.tolist(),
            "cov": self.cov.tolist(),
            "threshold": self.threshold,
            "theta": self.theta,
            "score_min": self.score_min,
            "score_max": self.score_max,
        }


def anomaly_scores(betas, model: AnomalyModel) -> np.ndarray:
    """Mahalanobis quadratic form ``(b - mu)^T cov^-1 (b - mu)`` for each row."""
    B = np.atleast_2d(np.asarray(betas, dtype=np.float64))
    if B.shape[1] != model.mu.shape[0]:
        raise DimensionMismatch(f"error vectors have {B.shape[1]} entries, model has {model.mu.shape[0]}")
    L = model.cholesky()
    z = np.linalg.solve(L, (B - model.mu).T)
    return np.maximum((z * z).sum(axis=0), 0.0)


def anomaly_score(beta, model: AnomalyModel) -> float:
    return float(anomaly_scores(np.atleast_1d(beta)[None, :], model)[0])


def normalize_scores(scores, lo: float, hi: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if hi > lo:
        return (scores - lo) / (hi - lo)
    return np.zeros_like(scores)


def f_theta(precision: float, recall: float, theta: float) -> float:
    t2 = theta * theta
    denom = t2 * precision + recall
    if precision + recall <= 0 or denom <= 0:
        return 0.0
    return (1.0 + t2) * precision * recall / denom


def _threshold_candidates(norm):
    distinct = np.unique(norm)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.unique(np.concatenate([[0.0, 1.0], mids]))


def select_threshold(scores, labels, theta: float = 0.05):
    """Best normalized threshold on labelled scores.

    Scores are min-max normalized, candidate cut-offs are ``{0, 1}`` plus the
    midpoints between consecutive distinct values, and ``score >= cut`` means
    anomalous. Returns ``(threshold, best F_theta)``; ties go to the smaller
    threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise LengthMismatch(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if labels.all() or not labels.any():
        raise DegenerateLabels("need at least one anomalous and one normal example")
    norm = normalize_scores(scores, scores.min(), scores.max())
    cands = _threshold_candidates(norm)
    order = np.sort(norm)
    pos_sorted = np.sort(norm[labels])
    n_pos = labels.sum()
    # counts of scores >= cut, via searchsorted on sorted arrays
    flagged = len(order) - np.searchsorted(order, cands, side="left")
    tp = n_pos - np.searchsorted(pos_sorted, cands, side="left")
    best_t, best_f = float(cands[0]), -1.0
    for cut, fl, t in zip(cands, flagged, tp):
        p = t / fl if fl else 0.0
        r = t / n_pos
        f = f_theta(p, r, theta)
        if f > best_f:
            best_t, best_f = float(cut), f
    return best_t, best_f


@dataclass
class EvalReport:
    rmse: float
    accuracy: float
    precision: float
    recall: float
    f_theta: float
    tp: int
    fp: int
    tn: int
    fn: int
    theta: float
    threshold: float
    n_windows: int
    precision_undefined: bool = False
    recall_undefined: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def rmse(predictions, actuals) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise LengthMismatch(f"predictions {p.shape} != actuals {a.shape}")
    if p.size == 0:
        raise EmptyData("no points to score")
    return math.sqrt(float(np.mean(np.abs(a - p) ** 2)))


def confusion(decisions, labels):
    d = np.asarray(decisions, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    return (
        int(np.sum(d & y)),
        int(np.sum(d & ~y)),
        int(np.sum(~d & ~y)),
        int(np.sum(~d & y)),
    )


def classification_report(decisions, labels, theta: float, threshold: float, rmse_value: float) -> EvalReport:
    tp, fp, tn, fn = confusion(decisions, labels)
    total = tp + fp + tn + fn
    p_undef = tp + fp == 0
    r_undef = tp + fn == 0
    precision = 0.0 if p_undef else tp / (tp + fp)
    recall = 0.0 if r_undef else tp / (tp + fn)
    return EvalReport(
        rmse=rmse_value,
        accuracy=(tp + tn) / total if total else 0.0,
        precision=precision,
        recall=recall,
        f_theta=f_theta(precision, recall, theta),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        theta=theta,
        threshold=threshold,
        n_windows=total,
        precision_undefined=p_undef,
        recall_undefined=r_undef,
    )


def evaluate(predictions, actuals, labels, model: AnomalyModel, theta: float | None = None) -> EvalReport:
    """RMSE of the forecasts plus window-level detection metrics.

    ``predictions``/``actuals`` are ``(n, T, d)`` horizon stacks and ``labels``
    one boolean per window.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if predictions.shape != actuals.shape or predictions.shape[0] != labels.shape[0]:
        raise LengthMismatch(
            f"predictions {predictions.shape}, actuals {actuals.shape}, labels {labels.shape}"
        )
    theta = model.theta if theta is None else theta
    scores = anomaly_scores(error_vector(predictions, actuals), model)
    decisions = model.normalize(scores) >= model.threshold
    return classification_report(decisions, labels, theta, model.threshold, rmse(predictions, actuals))
