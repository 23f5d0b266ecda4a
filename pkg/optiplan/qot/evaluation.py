from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.inspection import permutation_importance

from optiplan.numcore import SeededRng, derive_seed
from optiplan.qot import EmptySelection, NotConverged, QotException, SingularSystem
from optiplan.qot.features import FEATURE_COLUMNS, HIGH_BER_LOG10, QotDataset
from optiplan.qot.models import DEFAULT_SPECS, Family, ModelSpec, TrainedModel, fit_family, tune
from optiplan.runner import JobRunner, SerialRunner
from optiplan.utils import EVAL_SCHEMA, IMPORTANCE_SCHEMA, DocumentMaker, SchemaError, read_document

logger = logging.getLogger(__name__)

DEFAULT_SPLITS = 50
TRAIN_FRAC = 2.0 / 3.0
WORST_FRAC = 0.10
IMPORTANCE_REPEATS = 5
MIN_DATASET = 30
MAX_SCORE = 100.0


def mse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    if len(predicted) != len(actual) or not len(actual):
        raise QotException('Need matching non-empty predictions and labels')
    return float(np.mean((predicted - actual) ** 2))


def hmse(predicted, actual, threshold: float = HIGH_BER_LOG10) -> Optional[float]:
    """MSE over the points whose label exceeds `threshold`; None when there are none."""
    actual = np.asarray(actual, dtype=float).reshape(-1)
    high = actual > threshold
    if not high.any():
        return None
    return mse(np.asarray(predicted, dtype=float).reshape(-1)[high], actual[high])


def wmse(predicted, actual, frac: float = WORST_FRAC) -> float:
    """MSE over the ⌈frac·n⌉ largest squared errors; ties keep index order."""
    errors = (np.asarray(predicted, dtype=float).reshape(-1) - np.asarray(actual, dtype=float).reshape(-1)) ** 2
    count = max(1, math.ceil(frac * len(errors)))
    worst = np.argsort(-errors, kind='stable')[:count]
    return float(np.mean(errors[worst]))


@dataclass(frozen=True)
class SplitScore:
    split: int
    mse: float
    hmse: Optional[float]
    wmse: float
    params: Dict


def score_split(split: int, predicted, actual, params: Dict = None) -> SplitScore:
    return SplitScore(split, mse(predicted, actual), hmse(predicted, actual), wmse(predicted, actual), params or {})


@dataclass
class ModelScore:
    name: str
    family: Family
    splits: List[SplitScore] = field(default_factory=list)

    def _mean(self, attr: str) -> Optional[float]:
        values = [getattr(s, attr) for s in self.splits if getattr(s, attr) is not None]
        return float(np.mean(values)) if values else None

    @property
    def mse(self) -> Optional[float]:
        return self._mean('mse')

    @property
    def hmse(self) -> Optional[float]:
        return self._mean('hmse')

    @property
    def wmse(self) -> Optional[float]:
        return self._mean('wmse')

    def to_dict(self) -> dict:
        return {'model': self.name, 'family': self.family.value, 'mse': self.mse, 'hmse': self.hmse,
                'wmse': self.wmse, 'n_splits': len(self.splits)}


@dataclass
class ImportanceReport:
    columns: List[str]
    scores: np.ndarray
    raw: np.ndarray

    def ranked(self) -> List[Tuple[str, float]]:
        order = np.argsort(-self.scores, kind='stable')
        return [(self.columns[i], float(self.scores[i])) for i in order]

    def select(self, k: int = None, threshold: float = None) -> List[str]:
        """Top `k` features, or those scoring above `threshold`, in dataset column order."""
        if (k is None) == (threshold is None):
            raise ValueError('Give exactly one of k and threshold')
        if k is not None:
            if k < 1:
                raise EmptySelection('k must be at least 1')
            chosen = {name for name, _ in self.ranked()[:k]}
        else:
            if not 0 < threshold <= MAX_SCORE:
                raise ValueError('threshold must be in (0, 100]')
            chosen = {name for name, score in self.ranked() if score > threshold}
        if not chosen:
            raise EmptySelection('No feature scores above %s' % threshold)
        return [c for c in self.columns if c in chosen]

    def to_document(self) -> DocumentMaker:
        document = DocumentMaker(IMPORTANCE_SCHEMA)
        for name, score in self.ranked():
            document.append('features', {'feature': name, 'score': score})
        return document

    @classmethod
    def from_document(cls, source) -> ImportanceReport:
        document = read_document(source, IMPORTANCE_SCHEMA)
        try:
            rows = [(item['feature'], float(item['score'])) for item in document['features']]
        except (KeyError, TypeError, ValueError):
            raise SchemaError('Malformed importance document')
        scores = np.array([s for _, s in rows])
        return cls([n for n, _ in rows], scores, scores.copy())


def normalize_importance(raw: Sequence[float]) -> np.ndarray:
    """
    Floor at 0 and scale so the top feature scores exactly 100. Only the first
    of tied leaders keeps 100; the others are set just below it.
    """
    raw = np.maximum(np.asarray(raw, dtype=float), 0.0)
    top = float(raw.max()) if raw.size else 0.0
    if top <= 0:
        logger.warning('No feature increases the error when permuted; all importances are 0')
        return np.zeros_like(raw)
    scores = MAX_SCORE * raw / top
    leader = int(np.argmax(raw))
    below = np.nextafter(MAX_SCORE, 0.0)
    scores = np.where(scores >= MAX_SCORE, below, scores)
    scores[leader] = MAX_SCORE
    return scores


def raw_importance(estimator, x: np.ndarray, y: np.ndarray, seed: int = 0,
                   n_repeats: int = IMPORTANCE_REPEATS) -> np.ndarray:
    """Mean increase of MSE when each column is permuted."""
    result = permutation_importance(estimator, x, y, scoring='neg_mean_squared_error', n_repeats=n_repeats,
                                    random_state=derive_seed(seed, 'permute') % 2 ** 32)
    return np.asarray(result.importances_mean, dtype=float)


def feature_importance(model: TrainedModel, features: pd.DataFrame, labels, seed: int = 0,
                       n_repeats: int = IMPORTANCE_REPEATS) -> ImportanceReport:
    raw = raw_importance(model.estimator, model.design(features), np.asarray(labels, dtype=float), seed, n_repeats)
    return ImportanceReport(list(model.columns), normalize_importance(raw), np.maximum(raw, 0.0))


@dataclass
class EvalReport:
    models: List[ModelScore]
    columns: List[str]
    n_splits: int
    train_frac: float
    seed: int
    # (model name, actual, predicted) for the first split
    pairs: List[Tuple[str, float, float]] = field(default_factory=list)
    importance: Optional[ImportanceReport] = None

    def model(self, name: str) -> ModelScore:
        for score in self.models:
            if score.name == name:
                return score
        raise KeyError(name)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([m.to_dict() for m in self.models], columns=['model', 'family', 'mse', 'hmse', 'wmse',
                                                                          'n_splits'])

    def to_document(self) -> DocumentMaker:
        document = DocumentMaker(EVAL_SCHEMA, seed=self.seed, n_splits=self.n_splits, train_frac=self.train_frac,
                                 columns=self.columns)
        for score in self.models:
            document.append('models', score.to_dict())
        if self.importance is not None:
            document.add('importance', [{'feature': n, 'score': s} for n, s in self.importance.ranked()])
        return document

    def write_pairs_csv(self, path: Union[str, Path]):
        frame = pd.DataFrame(self.pairs, columns=['model', 'actual', 'predicted'])
        frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')


def _split_rows(n: int, train_frac: float, seed: int, split: int) -> Tuple[np.ndarray, np.ndarray]:
    order = SeededRng(derive_seed(seed, 'split', split)).permutation(n)
    n_train = int(round(train_frac * n))
    return order[:n_train], order[n_train:]


def evaluate_models(dataset: QotDataset, specs: Sequence[ModelSpec] = DEFAULT_SPECS, n_splits: int = DEFAULT_SPLITS,
                    train_frac: float = TRAIN_FRAC, seed: int = 0, runner: JobRunner = None,
                    columns: Sequence[str] = None, importance_of: str = None) -> EvalReport:
    """
    Score every spec over `n_splits` random train/test splits. Each split
    tunes hyperparameters on its own training rows, so splits are
    independent jobs. With `importance_of`, the permutation importance of
    that model is averaged over all splits.
    """
    if len(dataset) < MIN_DATASET:
        raise QotException('Need at least %d records, got %d' % (MIN_DATASET, len(dataset)))
    if not 0 < train_frac < 1:
        raise ValueError('train_frac must be in (0, 1)')
    if n_splits < 1:
        raise ValueError('n_splits must be at least 1')
    columns = list(columns if columns is not None else FEATURE_COLUMNS)
    x = dataset.features[columns].to_numpy(dtype=float)
    y = dataset.labels
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError('Model names must be unique: %s' % names)

    def job(split: int):
        train, test = _split_rows(len(y), train_frac, seed, split)
        scores, pairs, raw = {}, [], None
        for spec in specs:
            split_seed = derive_seed(seed, split, spec.name)
            try:
                params, _ = tune(spec, x[train], y[train], split_seed)
                estimator = fit_family(spec.family, x[train], y[train], params, split_seed)
            except (NotConverged, SingularSystem) as err:
                logger.warning('Split %d: no usable %s model: %s', split, spec.name, err)
                continue
            predicted = estimator.predict(x[test])
            scores[spec.name] = score_split(split, predicted, y[test], params)
            if split == 0:
                pairs.extend((spec.name, float(a), float(p)) for a, p in zip(y[test], predicted))
            if spec.name == importance_of:
                raw = raw_importance(estimator, x[test], y[test], split_seed)
        logger.debug('Split %d done', split)
        return scores, pairs, raw

    runner = runner or SerialRunner()
    results = runner.map(job, list(range(n_splits)))
    models = [ModelScore(s.name, s.family) for s in specs]
    for scores, _, _ in results:
        for model in models:
            if model.name in scores:
                model.splits.append(scores[model.name])
    report = EvalReport(models, columns, n_splits, train_frac, seed, results[0][1])
    raws = [raw for _, _, raw in results if raw is not None]
    if raws:
        mean_raw = np.maximum(np.mean(raws, axis=0), 0.0)
        report.importance = ImportanceReport(columns, normalize_importance(mean_raw), mean_raw)
    return report


def retrain_top_k(dataset: QotDataset, importance: ImportanceReport, k: int = None, threshold: float = None,
                  specs: Sequence[ModelSpec] = (ModelSpec(Family.FOREST),), **kwargs) -> EvalReport:
    """Re-run `evaluate_models` on the selected features only."""
    columns = importance.select(k, threshold)
    logger.info('Retraining on %d feature(s): %s', len(columns), ', '.join(columns))
    return evaluate_models(dataset, specs, columns=columns, **kwargs)
