"""
Regression model families for log10(BER) prediction.

Every `fit_*` function returns a fitted scikit-learn style estimator. The
random forest is assembled here from individually seeded trees so that a
one-tree forest without bootstrap reproduces `fit_tree` exactly.
"""
from __future__ import annotations
import io
import json
import logging
import math
import pickle
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.dummy import DummyRegressor
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso, LinearRegression, Ridge
from sklearn.metrics import mean_squared_error
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer, StandardScaler
from sklearn.tree import DecisionTreeRegressor

import optiplan
from optiplan.forecast import NOISE_VAR, THETA, fit_gpr, gpr_predict
from optiplan.numcore import SeededRng, as_matrix, derive_seed
from optiplan.qot import NotConverged, QotException, SchemaMismatch, SingularSystem
from optiplan.utils import MODEL_SCHEMA, SchemaError, read_document

try:
    from enum import StrEnum
except ImportError:
    class StrEnum(str, Enum):
        pass

logger = logging.getLogger(__name__)

LASSO_TOL = 1e-7
LASSO_MAX_ITER = 10_000
DEFAULT_CANDIDATES = 6
VALIDATION_FRAC = 0.2
GBT_MAX_DEPTH = 3


class Family(StrEnum):
    RIDGE = 'ridge'
    LASSO = 'lasso'
    QUAD_LASSO = 'quad-lasso'
    TREE = 'tree'
    FOREST = 'forest'
    GBT = 'gbt'
    GPR = 'gpr'


def _sk_seed(seed: int, *keys) -> int:
    return derive_seed(seed, *keys) % 2 ** 32


def fit_ridge(x, y, lam: float) -> BaseEstimator:
    """
    Minimizes ‖y − b0 − Xβ‖² + λ‖β‖²; the intercept is not penalized.
    λ = 0 is ordinary least squares and requires a full-rank design.
    """
    if lam < 0:
        raise ValueError('lambda must be non-negative')
    x = as_matrix(x)
    if lam == 0:
        model = LinearRegression().fit(x, y)
        if model.rank_ < x.shape[1]:
            raise SingularSystem('Design has rank %d < %d features' % (model.rank_, x.shape[1]))
        return model
    return Ridge(alpha=lam).fit(x, y)


def fit_lasso(x, y, lam: float, standardize: bool = True, tol: float = LASSO_TOL,
              max_iter: int = LASSO_MAX_ITER) -> BaseEstimator:
    """
    Minimizes ½‖y − b0 − Xβ‖² + λ‖β‖₁ by coordinate descent. Features are
    standardized first unless `standardize` is off.
    """
    if lam < 0:
        raise ValueError('lambda must be non-negative')
    x = as_matrix(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if lam == 0:
        # scaling does not change the least-squares fit
        return fit_ridge(x, y, 0.0)
    lasso = Lasso(alpha=lam / len(y), tol=tol, max_iter=max_iter)
    model = make_pipeline(StandardScaler(), lasso) if standardize else lasso
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        model.fit(x, y)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        raise NotConverged(int(np.max(lasso.n_iter_)))
    return model


def quad_expand(x) -> np.ndarray:
    """All ordered pairwise products: column i·d + j is x_i·x_j."""
    x = as_matrix(x)
    n, d = x.shape
    return (x[:, :, None] * x[:, None, :]).reshape(n, d * d)


def fit_quad_lasso(x, y, lam: float) -> BaseEstimator:
    quad = FunctionTransformer(quad_expand, validate=False)
    lasso = Lasso(alpha=lam / len(y), tol=LASSO_TOL, max_iter=LASSO_MAX_ITER)
    model = make_pipeline(quad, StandardScaler(), lasso)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter('always', ConvergenceWarning)
        model.fit(as_matrix(x), y)
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        raise NotConverged(int(np.max(lasso.n_iter_)))
    return model


def fit_tree(x, y, max_depth: Optional[int] = None, min_leaf: int = 1, seed: int = 0,
             max_features: Optional[int] = None) -> BaseEstimator:
    """Greedy squared-error tree splitting at midpoints; depth 0 is a single leaf."""
    if min_leaf < 1:
        raise ValueError('min_leaf must be at least 1')
    if max_depth == 0:
        return DummyRegressor(strategy='mean').fit(as_matrix(x), y)
    tree = DecisionTreeRegressor(max_depth=max_depth, min_samples_leaf=min_leaf, max_features=max_features,
                                 random_state=_sk_seed(seed, 0))
    return tree.fit(as_matrix(x), y)


class RandomForest(RegressorMixin, BaseEstimator):
    """Average of trees, each with its own seed, bootstrap sample and per-split feature subset."""

    def __init__(self, n_trees: int = 100, feature_frac: float = 1.0, bootstrap: bool = True,
                 max_depth: Optional[int] = None, min_leaf: int = 1, seed: int = 0):
        self.n_trees = n_trees
        self.feature_frac = feature_frac
        self.bootstrap = bootstrap
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.seed = seed

    def fit(self, x, y):
        if self.n_trees < 1:
            raise ValueError('n_trees must be at least 1')
        if not 0 < self.feature_frac <= 1:
            raise ValueError('feature_frac must be in (0, 1]')
        x = as_matrix(x)
        y = np.asarray(y, dtype=float).reshape(-1)
        n, d = x.shape
        max_features = None if self.feature_frac == 1 else math.ceil(self.feature_frac * d)
        self.estimators_ = []
        for index in range(self.n_trees):
            rows = np.arange(n)
            if self.bootstrap:
                rows = SeededRng(derive_seed(self.seed, 'bootstrap', index)).integers(0, n, n)
            self.estimators_.append(fit_tree(x[rows], y[rows], self.max_depth, self.min_leaf,
                                             derive_seed(self.seed, 'tree', index), max_features))
        self.n_features_in_ = d
        return self

    def tree_predictions(self, x) -> np.ndarray:
        x = as_matrix(x)
        return np.vstack([tree.predict(x) for tree in self.estimators_])

    def predict(self, x):
        return self.tree_predictions(x).mean(axis=0)

    @property
    def feature_importances_(self) -> np.ndarray:
        return np.mean([tree.feature_importances_ for tree in self.estimators_], axis=0)


def fit_random_forest(x, y, n_trees: int = 100, feature_frac: float = 1.0, bootstrap: bool = True,
                      seed: int = 0, max_depth: Optional[int] = None, min_leaf: int = 1) -> RandomForest:
    return RandomForest(n_trees, feature_frac, bootstrap, max_depth, min_leaf, seed).fit(x, y)


def fit_gbt(x, y, n_stages: int = 100, learning_rate: float = 0.1, max_depth: int = GBT_MAX_DEPTH,
            seed: int = 0) -> BaseEstimator:
    """Mean predictor followed by `n_stages` depth-limited trees fitted to the residuals."""
    if n_stages < 0:
        raise ValueError('n_stages must be non-negative')
    if not 0 < learning_rate <= 1:
        raise ValueError('learning_rate must be in (0, 1]')
    if n_stages == 0:
        return DummyRegressor(strategy='mean').fit(as_matrix(x), y)
    model = GradientBoostingRegressor(n_estimators=n_stages, learning_rate=learning_rate, max_depth=max_depth,
                                      random_state=_sk_seed(seed, 0))
    return model.fit(as_matrix(x), y)


def staged_training_mse(model: BaseEstimator, x, y) -> List[float]:
    """Training MSE after stage 0 (the mean) and after every boosting stage."""
    y = np.asarray(y, dtype=float).reshape(-1)
    curve = [float(np.mean((y - y.mean()) ** 2))]
    if isinstance(model, GradientBoostingRegressor):
        curve.extend(float(mean_squared_error(y, p)) for p in model.staged_predict(as_matrix(x)))
    return curve


class GprRegressor(RegressorMixin, BaseEstimator):
    """Squared-exponential GPR on standardized features and targets."""

    def __init__(self, theta: float = THETA, noise_var: float = NOISE_VAR):
        self.theta = theta
        self.noise_var = noise_var

    def fit(self, x, y):
        x = as_matrix(x)
        y = np.asarray(y, dtype=float).reshape(-1)
        self.scaler_ = StandardScaler().fit(x)
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std()) or 1.0
        self.state_ = fit_gpr(self.scaler_.transform(x), (y - self.y_mean_) / self.y_scale_,
                              self.theta, self.noise_var)
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, x):
        mean, _ = gpr_predict(self.state_, self.scaler_.transform(as_matrix(x)))
        return mean * self.y_scale_ + self.y_mean_


def _log_uniform(rng: SeededRng, low: float, high: float) -> float:
    return float(math.exp(rng.uniform(1, math.log(low), math.log(high))[0]))


# Regularization strengths are per training sample; fitting scales them by n.
SEARCH_SPACES: Dict[Family, Callable[[SeededRng], Dict[str, Any]]] = {
    Family.RIDGE: lambda rng: {'lam': _log_uniform(rng, 1e-4, 1e2)},
    Family.LASSO: lambda rng: {'lam': _log_uniform(rng, 1e-4, 1e2)},
    Family.QUAD_LASSO: lambda rng: {'lam': _log_uniform(rng, 1e-4, 1e2)},
    Family.TREE: lambda rng: {'max_depth': int(rng.integers(4, 13)),
                              'min_leaf': int(rng.choice([1, 5, 10]))},
    Family.FOREST: lambda rng: {'n_trees': int(rng.integers(50, 301)),
                                'feature_frac': float(rng.uniform(1, 0.3, 1.0)[0])},
    Family.GBT: lambda rng: {'n_stages': int(rng.integers(50, 501)),
                             'learning_rate': float(rng.uniform(1, 0.01, 0.3)[0])},
    Family.GPR: lambda rng: {'theta': _log_uniform(rng, 1e-3, 1.0),
                             'noise_var': _log_uniform(rng, 1e-3, 1.0)},
}


def fit_family(family: Union[Family, str], x, y, params: Mapping[str, Any], seed: int = 0) -> BaseEstimator:
    family = Family(family)
    n = len(y)
    if family == Family.RIDGE:
        return fit_ridge(x, y, params['lam'] * n)
    if family == Family.LASSO:
        return fit_lasso(x, y, params['lam'] * n)
    if family == Family.QUAD_LASSO:
        return fit_quad_lasso(x, y, params['lam'] * n)
    if family == Family.TREE:
        return fit_tree(x, y, params.get('max_depth'), params.get('min_leaf', 1), seed)
    if family == Family.FOREST:
        return fit_random_forest(x, y, params.get('n_trees', 100), params.get('feature_frac', 1.0),
                                 params.get('bootstrap', True), seed)
    if family == Family.GBT:
        return fit_gbt(x, y, params.get('n_stages', 100), params.get('learning_rate', 0.1),
                       params.get('max_depth', GBT_MAX_DEPTH), seed)
    return GprRegressor(params.get('theta', THETA), params.get('noise_var', NOISE_VAR)).fit(x, y)


@dataclass(frozen=True)
class ModelSpec:
    """
    A model family with either fixed `params` or a random search of
    `n_candidates` draws from the family's search space.
    """
    family: Family
    params: Optional[Mapping[str, Any]] = None
    n_candidates: int = DEFAULT_CANDIDATES
    name: str = None

    def __post_init__(self):
        object.__setattr__(self, 'family', Family(self.family))
        if self.name is None:
            object.__setattr__(self, 'name', self.family.value)
        if self.params is None and self.n_candidates < 1:
            raise ValueError('A searched spec needs at least one candidate')

    def candidates(self, rng: SeededRng) -> List[Dict[str, Any]]:
        if self.params is not None:
            return [dict(self.params)]
        return [SEARCH_SPACES[self.family](rng) for _ in range(self.n_candidates)]

    @classmethod
    def from_dict(cls, data: Mapping) -> ModelSpec:
        return cls(data['family'], data.get('params'), data.get('n_candidates', DEFAULT_CANDIDATES),
                   data.get('name'))


DEFAULT_SPECS: Tuple[ModelSpec, ...] = tuple(ModelSpec(f) for f in Family)


def tune(spec: ModelSpec, x, y, seed: int = 0) -> Tuple[Dict[str, Any], float]:
    """
    Pick the candidate with the lowest validation MSE on a random 80/20
    split of (x, y). Candidates that fail to converge are skipped.
    """
    rng = SeededRng(derive_seed(seed, 'search', spec.name))
    candidates = spec.candidates(rng)
    if len(candidates) == 1:
        return candidates[0], float('nan')
    x = as_matrix(x)
    y = np.asarray(y, dtype=float).reshape(-1)
    order = rng.permutation(len(y))
    n_val = max(1, int(round(VALIDATION_FRAC * len(y))))
    val, train = order[:n_val], order[n_val:]
    best = None
    for index, params in enumerate(candidates):
        try:
            model = fit_family(spec.family, x[train], y[train], params, derive_seed(seed, index))
        except (NotConverged, SingularSystem) as err:
            logger.warning('Skipping %s candidate %s: %s', spec.name, params, err)
            continue
        score = float(mean_squared_error(y[val], model.predict(x[val])))
        logger.debug('%s candidate %s: validation MSE %.4f', spec.name, params, score)
        if best is None or score < best[1]:
            best = (params, score)
    if best is None:
        raise NotConverged(LASSO_MAX_ITER)
    return best


@dataclass
class TrainedModel:
    family: Family
    params: Dict[str, Any]
    columns: List[str]
    estimator: BaseEstimator
    seed: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def design(self, records: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
        if isinstance(records, pd.DataFrame):
            for column in self.columns:
                if column not in records.columns:
                    raise SchemaMismatch(column)
            return records[self.columns].to_numpy(dtype=float)
        x = as_matrix(records)
        if x.shape[1] != len(self.columns):
            raise SchemaMismatch(self.columns[0] if x.shape[1] < len(self.columns) else '?',
                                 'Expected %d feature columns, got %d' % (len(self.columns), x.shape[1]))
        return x

    def predict(self, records: Union[pd.DataFrame, np.ndarray]) -> np.ndarray:
        return np.asarray(self.estimator.predict(self.design(records)), dtype=float)


def train_model(features: pd.DataFrame, labels, spec: ModelSpec, seed: int = 0,
                columns: Sequence[str] = None) -> TrainedModel:
    columns = list(columns if columns is not None else features.columns)
    x = features[columns].to_numpy(dtype=float)
    params, score = tune(spec, x, labels, seed)
    estimator = fit_family(spec.family, x, labels, params, derive_seed(seed, 'final'))
    logger.info('Trained %s with %s', spec.name, params)
    return TrainedModel(spec.family, dict(params), columns, estimator, seed,
                        {'validation_mse': None if math.isnan(score) else score, 'n_train': len(labels)})


def save_model(model: TrainedModel, path: Union[str, Path]):
    """One JSON header line followed by the pickled estimator."""
    header = {'schema': MODEL_SCHEMA, 'version': optiplan.__version__, 'family': model.family.value,
              'params': model.params, 'columns': model.columns, 'seed': model.seed, 'metadata': model.metadata}
    with open(path, 'wb') as stream:
        stream.write(json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
        pickle.dump(model.estimator, stream, protocol=4)


def load_model(path: Union[str, Path]) -> TrainedModel:
    with open(path, 'rb') as stream:
        raw = stream.read()
    line, _, payload = raw.partition(b'\n')
    try:
        header = read_document(json.loads(line.decode('utf-8')), MODEL_SCHEMA)
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise SchemaError('%s is not an optiplan model file' % path)
    try:
        estimator = pickle.load(io.BytesIO(payload))
    except (pickle.UnpicklingError, EOFError) as err:
        raise QotException('Corrupt model payload in %s: %s' % (path, err))
    return TrainedModel(Family(header['family']), header['params'], header['columns'], estimator,
                        header.get('seed', 0), header.get('metadata', {}))
