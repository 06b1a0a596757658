"""
Base learners mu(x, s1) trained on an index set.

All learners are scikit-learn estimators behind one spec type, so a SplitRun
can refit any of them on every training set s1.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np
from sklearn.dummy import DummyRegressor
from sklearn.ensemble import RandomForestRegressor
from sklearn.linear_model import LinearRegression
from sklearn.neighbors import KNeighborsRegressor
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from config import Config

logger = logging.getLogger(__name__)


class LearnerError(ValueError):
    """Represents a learner that cannot be fitted or evaluated"""


class LearnerKind(str, Enum):
    OLS = 'OLS'
    RANDOM_FOREST = 'RANDOM_FOREST'
    KNN = 'KNN'
    CONSTANT = 'CONSTANT'
    MEAN = 'MEAN'


@dataclass(frozen=True)
class LearnerSpec:
    kind: LearnerKind
    name: Optional[str] = None
    # Random forest
    n_trees: int = Config.FOREST_TREES
    max_features: Optional[int] = Config.FOREST_MAX_FEATURES
    min_leaf: int = Config.FOREST_MIN_LEAF
    bootstrap: bool = Config.FOREST_BOOTSTRAP
    seed: int = 0
    # k-nearest neighbours
    k: int = Config.KNN_NEIGHBOURS
    # Constant learner
    constant: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', LearnerKind(self.kind))
        if self.name is None:
            object.__setattr__(self, 'name', self.kind.value.lower())
        if self.n_trees < 1 or self.min_leaf < 1 or self.k < 1:
            raise LearnerError(f'{self.name}: hyperparameters must be positive')
        if self.max_features is not None and self.max_features < 1:
            raise LearnerError(f'{self.name}: max_features must be positive')

    @property
    def deterministic(self) -> bool:
        """True when fit depends on the data only (forests depend on the seed too)."""
        return self.kind != LearnerKind.RANDOM_FOREST

    def with_seed(self, seed: int) -> 'LearnerSpec':
        return replace(self, seed=int(seed))

    @classmethod
    def from_dict(cls, data: dict) -> 'LearnerSpec':
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise LearnerError(f'malformed learner spec {data}: {e}') from e


@dataclass(frozen=True)
class TrainedPredictor:
    spec: LearnerSpec
    estimator: object
    train_ids: Optional[tuple] = None

    @property
    def kind(self) -> LearnerKind:
        return self.spec.kind

    @property
    def coefficients(self) -> np.ndarray:
        """Intercept followed by slopes (OLS only)."""
        if self.kind != LearnerKind.OLS:
            raise LearnerError('coefficients are only defined for OLS')
        return np.concatenate([[self.estimator.intercept_], self.estimator.coef_])


def _build(spec: LearnerSpec, n_train: int):
    if spec.kind == LearnerKind.OLS:
        # lstsq gives the minimal-norm solution on rank-deficient subsamples
        return LinearRegression(fit_intercept=True)
    if spec.kind == LearnerKind.RANDOM_FOREST:
        return RandomForestRegressor(
            n_estimators=spec.n_trees,
            max_features=spec.max_features,
            min_samples_leaf=spec.min_leaf,
            bootstrap=spec.bootstrap,
            random_state=spec.seed,
            n_jobs=1,
        )
    if spec.kind == LearnerKind.KNN:
        # Scaler moments come from the training rows only
        return make_pipeline(
            StandardScaler(),
            KNeighborsRegressor(n_neighbors=min(spec.k, n_train)),
        )
    if spec.kind == LearnerKind.CONSTANT:
        return DummyRegressor(strategy='constant', constant=spec.constant)
    return DummyRegressor(strategy='mean')


def fit(spec: LearnerSpec, features, outcomes, train_ids=None) -> TrainedPredictor:
    X = np.asarray(features, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != y.shape[0]:
        raise LearnerError(f'{spec.name}: {X.shape[0]} feature rows but {y.shape[0]} outcomes')
    if X.shape[0] < 2:
        raise LearnerError(f'{spec.name}: need at least 2 training rows, got {X.shape[0]}')
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise LearnerError(f'{spec.name}: training data must be finite')

    estimator = _build(spec, X.shape[0])
    estimator.fit(X, y)
    ids = None if train_ids is None else tuple(int(i) for i in train_ids)
    return TrainedPredictor(spec=spec, estimator=estimator, train_ids=ids)


def predict(model: TrainedPredictor, x):
    """
    Prediction for one feature vector (returns a float) or for the rows of a
    feature matrix (returns an array).
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not np.all(np.isfinite(X)):
        raise LearnerError(f'{model.spec.name}: features must be finite')
    out = np.asarray(model.estimator.predict(X), dtype=float)
    if not np.all(np.isfinite(out)):
        raise LearnerError(f'{model.spec.name}: non-finite prediction')
    return float(out[0]) if single else out
