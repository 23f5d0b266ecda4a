import numpy as np
import pytest

from optiplan.numcore import SeededRng
from optiplan.qot import EmptySelection, QotException
from optiplan.qot.evaluation import (ImportanceReport, evaluate_models, feature_importance, hmse, mse,
                                     normalize_importance, retrain_top_k, wmse)
from optiplan.qot.features import FEATURE_COLUMNS, PLANTED_DRIVERS, synth_qot_dataset
from optiplan.qot.models import Family, ModelSpec, train_model
from optiplan.runner import ThreadRunner
from optiplan.utils import EVAL_SCHEMA

SMALL_SPECS = (ModelSpec(Family.RIDGE, {'lam': 0.001}), ModelSpec(Family.TREE, {'max_depth': 4}))
FOREST = ModelSpec(Family.FOREST, {'n_trees': 50, 'feature_frac': 0.5})
BAGGED_FOREST = ModelSpec(Family.FOREST, {'n_trees': 50})
RIDGE = ModelSpec(Family.RIDGE, {'lam': 0.001})
# best to worst
RANKED_SPECS = (FOREST, ModelSpec(Family.GBT, {'n_stages': 200, 'learning_rate': 0.1}),
                ModelSpec(Family.QUAD_LASSO, {'lam': 0.1}), RIDGE)


@pytest.fixture(scope='module')
def small_dataset():
    return synth_qot_dataset(60, SeededRng(1))


def test_error_metrics():
    predicted, actual = np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0])
    assert mse(predicted, actual) == pytest.approx(7.5)
    assert wmse(predicted, actual) == pytest.approx(16.0)
    assert wmse(predicted, actual, 0.5) == pytest.approx(12.5)
    assert hmse(predicted, actual) == pytest.approx(7.5)
    assert hmse([0.0, 0.0], [-10.0, -8.0]) is None
    assert hmse([0.0, 0.0], [-10.0, -4.0]) == pytest.approx(16.0)
    with pytest.raises(QotException):
        mse([1.0], [1.0, 2.0])


def test_worst_errors_dominate_mean():
    rng = SeededRng(2)
    predicted, actual = rng.normal(100), rng.normal(100)
    assert wmse(predicted, actual) >= mse(predicted, actual)


def test_normalize_importance():
    scores = normalize_importance([1.0, 2.0, -3.0, 2.0])
    assert list(scores[:3]) == [50.0, 100.0, 0.0]
    assert 99.99 < scores[3] < 100.0
    assert np.sum(scores == 100.0) == 1
    assert np.array_equal(normalize_importance([0.0, -1.0]), np.zeros(2))


def test_importance_selection():
    report = ImportanceReport(['a', 'b', 'c', 'd'], np.array([10.0, 100.0, 40.0, 5.0]), np.zeros(4))
    assert report.ranked()[0] == ('b', 100.0)
    assert report.select(k=2) == ['b', 'c']
    assert report.select(threshold=7.5) == ['a', 'b', 'c']
    with pytest.raises(EmptySelection):
        report.select(k=0)
    with pytest.raises(EmptySelection):
        report.select(threshold=100.0)
    with pytest.raises(ValueError):
        report.select()
    loaded = ImportanceReport.from_document(report.to_document().root)
    assert loaded.ranked() == report.ranked()


def test_evaluate_models(small_dataset):
    report = evaluate_models(small_dataset, SMALL_SPECS, n_splits=3, seed=4, importance_of='tree')
    assert [m.name for m in report.models] == ['ridge', 'tree']
    assert [len(m.splits) for m in report.models] == [3, 3]
    assert all(m.wmse >= m.mse for m in report.models)
    assert len(report.pairs) == 2 * 20
    assert list(report.table().columns) == ['model', 'family', 'mse', 'hmse', 'wmse', 'n_splits']
    assert report.importance.columns == FEATURE_COLUMNS
    assert report.importance.scores.max() == 100.0
    document = report.to_document().root
    assert document['schema'] == EVAL_SCHEMA
    assert len(document['importance']) == len(FEATURE_COLUMNS)


def test_evaluation_is_runner_independent(small_dataset):
    serial = evaluate_models(small_dataset, SMALL_SPECS, n_splits=3, seed=5)
    threaded = evaluate_models(small_dataset, SMALL_SPECS, n_splits=3, seed=5, runner=ThreadRunner(3))
    assert [m.splits for m in serial.models] == [m.splits for m in threaded.models]
    assert serial.pairs == threaded.pairs


def test_evaluation_arguments(small_dataset):
    with pytest.raises(QotException):
        evaluate_models(synth_qot_dataset(20, SeededRng(1)), SMALL_SPECS, n_splits=1)
    with pytest.raises(ValueError):
        evaluate_models(small_dataset, SMALL_SPECS * 2, n_splits=1)
    with pytest.raises(ValueError):
        evaluate_models(small_dataset, SMALL_SPECS, n_splits=1, train_frac=1.0)


def test_pairs_csv(small_dataset, tmp_path):
    report = evaluate_models(small_dataset, SMALL_SPECS[:1], n_splits=1)
    report.write_pairs_csv(tmp_path / 'pairs.csv')
    lines = (tmp_path / 'pairs.csv').read_text().splitlines()
    assert lines[0] == 'model,actual,predicted'
    assert len(lines) == 21


def test_retrain_top_k(small_dataset):
    importance = ImportanceReport(FEATURE_COLUMNS, np.linspace(1.0, 100.0, len(FEATURE_COLUMNS)),
                                  np.zeros(len(FEATURE_COLUMNS)))
    report = retrain_top_k(small_dataset, importance, k=3, specs=SMALL_SPECS[1:], n_splits=2)
    assert report.columns == ['aux_12', 'aux_13', 'aux_14']
    assert len(report.models[0].splits) == 2


def test_feature_importance_of_trained_model(small_dataset):
    model = train_model(small_dataset.features, small_dataset.labels, SMALL_SPECS[1], columns=['osnr_db', 'aux_14'])
    report = feature_importance(model, small_dataset.features, small_dataset.labels)
    assert report.columns == ['osnr_db', 'aux_14']
    assert report.ranked()[0][0] == 'osnr_db'
    assert report.scores[1] == 0.0


@pytest.mark.slow
def test_forest_beats_ridge_split_by_split():
    report = evaluate_models(synth_qot_dataset(2700, SeededRng(7)), (RIDGE, FOREST), n_splits=50, seed=1)
    forest, ridge = report.model('forest').splits, report.model('ridge').splits
    assert len(forest) == len(ridge) == 50
    assert sum(f.mse < r.mse for f, r in zip(forest, ridge)) >= 45
    assert all(s.wmse >= s.mse for m in report.models for s in m.splits)


@pytest.mark.slow
def test_model_families_keep_their_ranking():
    ranked = 0
    for seed in range(10):
        report = evaluate_models(synth_qot_dataset(2700, SeededRng(seed)), RANKED_SPECS, n_splits=2, seed=seed)
        errors = [report.model(spec.name).mse for spec in RANKED_SPECS]
        ranked += all(a <= b for a, b in zip(errors, errors[1:]))
    assert ranked >= 8


@pytest.mark.slow
def test_planted_drivers_take_the_top_ranks():
    recovered = 0
    for seed in range(10):
        dataset = synth_qot_dataset(1500, SeededRng(20 + seed))
        report = evaluate_models(dataset, (BAGGED_FOREST,), n_splits=1, seed=seed, importance_of='forest')
        ranked = report.importance.ranked()
        assert ranked[0][1] == 100.0
        assert dict(ranked)['aux_14'] == 0.0
        recovered += {name for name, _ in ranked[:4]} == set(PLANTED_DRIVERS)
    assert recovered >= 9


@pytest.mark.slow
def test_top_ten_features_keep_forest_accuracy():
    dataset = synth_qot_dataset(2700, SeededRng(9))
    full = evaluate_models(dataset, (FOREST,), n_splits=3, seed=3, importance_of='forest')
    top = retrain_top_k(dataset, full.importance, k=10, specs=(FOREST,), n_splits=3, seed=3)
    assert len(top.columns) == 10
    assert top.model('forest').mse <= full.model('forest').mse + 0.15
