"""scikit-learn compatible estimators wrapping the functional core."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import anomaly
from .compression import CompressorConfig
from .exceptions import DegenerateLabels, TooFewSamples
from .federation import FederationConfig, run_training
from .model import network
from .model.params import ArchConfig, ParameterSet
from .timeseries import (
    NodePartition,
    NormalizationParams,
    RawSeries,
    fit_normalizer,
    make_windows,
    partition,
    stack_windows,
)

logger = logging.getLogger(__name__)


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Per-column scaling to [0, 1]; constant columns map to 0."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.params_ = fit_normalizer(X)
        self.data_min_ = self.params_.min
        self.data_max_ = self.params_.max
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        span = self.data_max_ - self.data_min_
        out = (X - self.data_min_) / np.where(span == 0, 1.0, span)
        out[:, span == 0] = 0.0
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return X * (self.data_max_ - self.data_min_) + self.data_min_


class GaussianOutlierDetector(BaseEstimator):
    """Independent per-feature Gaussian density; points below ``epsilon`` are anomalous.

    Parameters
    ----------
    epsilon : float, default=1e-3
        Density cut-off. ``predict`` returns 1 where ``p(x) < epsilon``.
    """

    def __init__(self, epsilon=1e-3):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.baseline_ = anomaly.fit_gaussian_baseline(X)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "baseline_")
        return anomaly.gaussian_probability(check_array(X, dtype=np.float64), self.baseline_)

    def predict(self, X):
        return (self.score_samples(X) < self.epsilon).astype(int)


class MahalanobisScorer(BaseEstimator):
    def __init__(self, diagonal=False):
        self.diagonal = diagonal

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_, self.covariance_ = anomaly.fit_anomaly_model(X, diagonal=self.diagonal)
        self.model_ = anomaly.AnomalyModel(self.mean_, self.covariance_)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return anomaly.anomaly_scores(check_array(X, dtype=np.float64), self.model_)


class FederatedAnomalyDetector(BaseEstimator):
    """Window-level anomaly detector trained by simulated federated learning.

    ``fit`` takes one series ``X`` of shape ``(n_points, n_features)`` and
    optional per-point labels ``y``. It cuts the series into stride-1
    (history, horizon) windows, deals them to ``n_nodes`` simulated edge
    nodes, trains the attention-CNN-LSTM forecaster with Top-``rho``%
    compressed gradient exchange, then fits a Gaussian to forecast errors of
    normal validation windows and picks the score threshold that maximises
    ``F_theta`` on validation.

    Without labels every validation window is treated as normal and the
    threshold is set to 1.0, i.e. only scores above the validation maximum
    are flagged.

    Attributes
    ----------
    params_ : ParameterSet
        Final global model parameters.
    round_reports_ : list of RoundReport
    anomaly_model_ : AnomalyModel
    partitions_ : list of NodePartition
        Per-node train/validation/test windows (normalized).
    """

    def __init__(
        self,
        window=16,
        n_nodes=10,
        rounds=300,
        eta=0.001,
        batch_size=128,
        local_steps=1,
        rho=0.3,
        momentum=0.9,
        clip_norm=1.0,
        warmup_rounds=0,
        lam=0.0,
        cnn_layers=((3, 16), (3, 32)),
        pool_widths=(2, 2),
        attention=True,
        attention_stages=((3, 2), (3, 2)),
        lstm_hidden=32,
        theta=0.05,
        train_frac=0.6,
        val_frac=0.1,
        diagonal_cov=False,
        seed=0,
    ):
        self.window = window
        self.n_nodes = n_nodes
        self.rounds = rounds
        self.eta = eta
        self.batch_size = batch_size
        self.local_steps = local_steps
        self.rho = rho
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.warmup_rounds = warmup_rounds
        self.lam = lam
        self.cnn_layers = cnn_layers
        self.pool_widths = pool_widths
        self.attention = attention
        self.attention_stages = attention_stages
        self.lstm_hidden = lstm_hidden
        self.theta = theta
        self.train_frac = train_frac
        self.val_frac = val_frac
        self.diagonal_cov = diagonal_cov
        self.seed = seed

    def arch_config(self, n_features: int) -> ArchConfig:
        return ArchConfig(
            input_dims=n_features,
            window=self.window,
            cnn_layers=self.cnn_layers,
            pool_widths=self.pool_widths,
            attention=self.attention,
            attention_stages=self.attention_stages,
            lstm_hidden=self.lstm_hidden,
        )

    def federation_config(self) -> FederationConfig:
        return FederationConfig(
            n_nodes=self.n_nodes,
            eta=self.eta,
            rounds=self.rounds,
            batch_size=self.batch_size,
            local_steps=self.local_steps,
            seed=self.seed,
            lam=self.lam,
            compressor=CompressorConfig(
                rho=self.rho,
                momentum=self.momentum,
                clip_norm=self.clip_norm,
                warmup_rounds=self.warmup_rounds,
            ),
        )

    # -- fitting ------------------------------------------------------------

    def _validate_series(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_2d=False)
        if X.ndim == 1:
            X = X[:, None]
        if y is not None:
            y = np.asarray(y).astype(bool)
        return RawSeries("input", X, y)

    def _prepare(self, X, y=None):
        raw = self._validate_series(X, y)
        raw_parts = partition(
            make_windows(raw, self.window), self.n_nodes, self.train_frac, self.val_frac, self.seed
        )
        mask = np.zeros(len(raw), dtype=bool)
        for p in raw_parts:
            for w in p.train:
                mask[w.start_index : w.start_index + 2 * self.window] = True
        self.normalizer_ = MinMaxNormalizer().fit(raw.points[mask])
        norm = RawSeries(raw.name, self.normalizer_.transform(raw.points), raw.labels)
        by_start = {w.start_index: w for w in make_windows(norm, self.window)}

        def remap(ws):
            return [by_start[w.start_index] for w in ws]

        self.partitions_ = [
            NodePartition(p.node_id, remap(p.train), remap(p.validation), remap(p.test)) for p in raw_parts
        ]
        self.labelled_ = y is not None
        self.n_features_in_ = raw.dims
        self.arch_ = self.arch_config(raw.dims)

    def fit(self, X, y=None, on_round=None, on_update=None):
        self._prepare(X, y)
        self.params_, self.round_reports_ = run_training(
            self.partitions_,
            self.arch_,
            self.federation_config(),
            on_round=on_round,
            on_update=on_update,
        )
        self._calibrate()
        return self

    def calibrate(self, X, y, params: ParameterSet):
        """Attach already-trained parameters, then fit the error model and threshold."""
        self._prepare(X, y)
        if params.arch != self.arch_:
            raise ValueError("checkpoint architecture does not match estimator settings")
        self.params_ = params
        self.round_reports_ = []
        self._calibrate()
        return self

    def _split(self, name):
        return [w for p in self.partitions_ for w in getattr(p, name)]

    def _calibrate(self):
        val = self._split("validation")
        if len(val) < 2:
            raise TooFewSamples("validation split needs at least 2 windows")
        X, Y = stack_windows(val)
        labels = np.array([w.label for w in val])
        errors = anomaly.error_vector(network.predict(X, self.params_), Y)
        normal = errors[~labels] if self.labelled_ else errors
        mu, cov = anomaly.fit_anomaly_model(normal, diagonal=self.diagonal_cov)
        model = anomaly.AnomalyModel(mu, cov, theta=self.theta)
        scores = anomaly.anomaly_scores(errors, model)
        model.score_min, model.score_max = float(scores.min()), float(scores.max())
        self.validation_f_theta_ = None
        if self.labelled_:
            try:
                model.threshold, self.validation_f_theta_ = anomaly.select_threshold(scores, labels, self.theta)
            except DegenerateLabels:
                warnings.warn("validation split has a single class; threshold set to 1.0", stacklevel=3)
                model.threshold = 1.0
        else:
            model.threshold = 1.0
        self.anomaly_model_ = model

    # -- inference ----------------------------------------------------------

    def _windows(self, X):
        check_is_fitted(self, "params_")
        raw = self._validate_series(X)
        norm = RawSeries(raw.name, self.normalizer_.transform(raw.points))
        return stack_windows(make_windows(norm, self.window))

    def forecast(self, X):
        """Normalized forecasts, one ``(T, d)`` horizon per stride-1 window of ``X``."""
        hist, _ = self._windows(X)
        return network.predict(hist, self.params_)

    def score_samples(self, X):
        hist, horizon = self._windows(X)
        errors = anomaly.error_vector(network.predict(hist, self.params_), horizon)
        return anomaly.anomaly_scores(errors, self.anomaly_model_)

    def decision_function(self, X):
        return self.anomaly_model_.normalize(self.score_samples(X)) - self.anomaly_model_.threshold

    def predict(self, X):
        """1 for windows whose horizon is judged anomalous, else 0."""
        return (self.decision_function(X) >= 0).astype(int)

    def test_windows(self):
        return sorted(self._split("test"), key=lambda w: w.start_index)

    def evaluate(self, X=None, y=None) -> anomaly.EvalReport:
        """Metrics on ``(X, y)``, or on the held-out test windows from ``fit``."""
        check_is_fitted(self, "anomaly_model_")
        if X is None:
            windows = self.test_windows()
            hist, horizon = stack_windows(windows)
            labels = np.array([w.label for w in windows])
        else:
            raw = self._validate_series(X, y)
            norm = RawSeries(raw.name, self.normalizer_.transform(raw.points), raw.labels)
            windows = make_windows(norm, self.window)
            hist, horizon = stack_windows(windows)
            labels = np.array([w.label for w in windows])
        preds = network.predict(hist, self.params_)
        return anomaly.evaluate(preds, horizon, labels, self.anomaly_model_, self.theta)

    def test_scores(self):
        """``(start_index, score, label, decision)`` rows for the held-out test windows."""
        windows = self.test_windows()
        hist, horizon = stack_windows(windows)
        errors = anomaly.error_vector(network.predict(hist, self.params_), horizon)
        scores = anomaly.anomaly_scores(errors, self.anomaly_model_)
        decisions = self.anomaly_model_.normalize(scores) >= self.anomaly_model_.threshold
        return [
            (w.start_index, float(s), bool(w.label), bool(d)) for w, s, d in zip(windows, scores, decisions)
        ]

    @property
    def normalization_params_(self) -> NormalizationParams:
        return self.normalizer_.params_
