"""
Command-line front end.

    optiplan gen-traffic --profile traffic.json --out series.csv --seed 7
    optiplan forecast --series series.csv --horizons 1,24 --actuals test.csv --out forecast.json
    optiplan plan --network net.json --scenarios scen.json --modes 1,2,3,4 --out plan.csv
    optiplan qot gen --n 2700 --out qot.csv
    optiplan qot eval --data qot.csv --splits 50 --out eval.json

Exit status: 0 on success, 1 on a runtime or validation failure, 2 on a
usage error.
"""
from __future__ import annotations
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

import optiplan
from optiplan import OptiplanException
from optiplan.forecast import DEFAULT_MAX_LAG, evaluate, forecast_trajectory, relative_errors
from optiplan.mlopt.planner import (DEFAULT_ORDERINGS, DEFAULT_UNCERTAINTY_FACTOR, MODES, PlannerConfig, plan_document,
                                    plan_ladder, write_plan_table)
from optiplan.netmodel import NetworkException, Severity, load_network, validate
from optiplan.numcore import SeededRng, derive_seed
from optiplan.qot.evaluation import DEFAULT_SPLITS, evaluate_models, retrain_top_k
from optiplan.qot.features import (DEFAULT_DATASET_SIZE, FEATURE_COLUMNS, HIGH_BER_LOG10, read_dataset_csv,
                                   read_records_csv, synth_qot_dataset, write_dataset_csv)
from optiplan.qot.models import DEFAULT_CANDIDATES, DEFAULT_SPECS, Family, ModelSpec, load_model, save_model, train_model
from optiplan.qot.pce import predict_records
from optiplan.runner import make_runner
from optiplan.traffgen import read_series_csv, write_series_csv
from optiplan.utils import (FORECAST_SCHEMA, RUN_SCHEMA, SCENARIO_SCHEMA, TRAFFIC_SCHEMA, DocumentMaker,
                            read_document, translate_to_object)

logger = logging.getLogger(__name__)

INTERNAL_KEYS = {'handler', 'parser', 'config', 'verbose'}


class UsageError(Exception):
    pass


def _int_list(value) -> List[int]:
    if isinstance(value, str):
        items = [v for v in value.replace(' ', '').split(',') if v]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [value]
    try:
        return [int(v) for v in items]
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError('expected a comma separated list of integers, got %r' % (value,))


def horizons_type(value) -> List[int]:
    horizons = _int_list(value)
    if not horizons or min(horizons) < 1:
        raise argparse.ArgumentTypeError('horizons must be positive integers')
    return horizons


def modes_type(value) -> List[int]:
    modes = _int_list(value)
    if not modes or any(m not in MODES for m in modes):
        raise argparse.ArgumentTypeError('modes must be drawn from %s' % ', '.join(map(str, MODES)))
    return modes


def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--seed', type=int, default=0, help='master random seed (default 0)')
    parser.add_argument('--out', help='output file')
    parser.add_argument('--config', help='JSON file whose keys default the command options')
    parser.add_argument('--workers', type=int, default=1, help='worker threads (default 1)')
    parser.add_argument('-v', '--verbose', action='count', default=0, help='log progress to standard error')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='optiplan', description='Multi-layer IP/optical planning toolkit.')
    parser.add_argument('--version', action='version', version='%(prog)s ' + optiplan.__version__)
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    p = commands.add_parser('gen-traffic', help='generate synthetic hourly tunnel traffic')
    _common(p)
    p.add_argument('--profile', help='traffic config JSON (optiplan-traffic-1)')
    p.set_defaults(handler=cmd_gen_traffic, parser=p)

    p = commands.add_parser('forecast', help='forecast tunnel traffic with lag-selected GPR')
    _common(p)
    p.add_argument('--series', help='traffic CSV used for training')
    p.add_argument('--horizons', type=horizons_type, default=[1], help='comma separated horizons in hours')
    p.add_argument('--actuals', help='traffic CSV with the observed values of the forecast window')
    p.add_argument('--max-lag', type=int, default=DEFAULT_MAX_LAG)
    p.add_argument('--trajectory-csv', help='also write actual-vs-forecast rows to this CSV')
    p.set_defaults(handler=cmd_forecast, parser=p)

    p = commands.add_parser('plan', help='plan capacity for a scenario set')
    _common(p)
    p.add_argument('--network', help='network JSON (optiplan-net-1)')
    p.add_argument('--scenarios', help='scenario JSON (optiplan-scen-1)')
    p.add_argument('--modes', type=modes_type, default=list(MODES), help='comma separated modes 1-4')
    p.add_argument('--orderings', type=int, default=DEFAULT_ORDERINGS)
    p.add_argument('--uncertainty-factor', type=float, default=DEFAULT_UNCERTAINTY_FACTOR)
    p.add_argument('--json', help='also write the plan document to this file')
    p.set_defaults(handler=cmd_plan, parser=p)

    qot = commands.add_parser('qot', help='wavelength quality-of-transmission models')
    qot_commands = qot.add_subparsers(dest='qot_command', metavar='qot-command')
    qot_commands.required = True

    p = qot_commands.add_parser('gen', help='generate a synthetic wavelength dataset')
    _common(p)
    p.add_argument('--n', type=int, default=DEFAULT_DATASET_SIZE)
    p.set_defaults(handler=cmd_qot_gen, parser=p)

    p = qot_commands.add_parser('train', help='train one model family')
    _common(p)
    p.add_argument('--data', help='dataset CSV')
    p.add_argument('--family', choices=[f.value for f in Family], default=Family.FOREST.value)
    p.add_argument('--columns', help='comma separated feature subset')
    p.add_argument('--candidates', type=int, default=DEFAULT_CANDIDATES)
    p.set_defaults(handler=cmd_qot_train, parser=p)

    p = qot_commands.add_parser('eval', help='score model families over random splits')
    _common(p)
    p.add_argument('--data', help='dataset CSV')
    p.add_argument('--splits', type=int, default=DEFAULT_SPLITS)
    p.add_argument('--families',
                   help='comma separated families (default: ridge,lasso,quad-lasso,tree,forest,gbt,gpr)')
    p.add_argument('--candidates', type=int, help='random-search candidates per model and split')
    p.add_argument('--pairs-csv', help='write split-0 predicted-vs-actual pairs to this CSV')
    p.set_defaults(handler=cmd_qot_eval, parser=p)

    p = qot_commands.add_parser('importance', help='permutation importance of the forest')
    _common(p)
    p.add_argument('--data', help='dataset CSV')
    p.add_argument('--splits', type=int, default=DEFAULT_SPLITS)
    p.add_argument('--candidates', type=int)
    p.add_argument('--top-k', type=int, help='re-evaluate the forest on the top k features')
    p.add_argument('--threshold', type=float, help='re-evaluate on features scoring above this')
    p.set_defaults(handler=cmd_qot_importance, parser=p)

    p = qot_commands.add_parser('predict', help='predict log10 BER and pass/fail verdicts')
    _common(p)
    p.add_argument('--model', help='model file written by `qot train`')
    p.add_argument('--records', help='CSV with the feature columns')
    p.add_argument('--threshold', type=float, default=HIGH_BER_LOG10, help='log10 BER threshold (default -6)')
    p.set_defaults(handler=cmd_qot_predict, parser=p)
    return parser


def _require(args, *names: str):
    for name in names:
        if getattr(args, name, None) in (None, ''):
            raise UsageError('the following argument is required: --%s' % name.replace('_', '-'))


def _settings(args) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in INTERNAL_KEYS}


def _run_block(args) -> dict:
    return DocumentMaker(RUN_SCHEMA, version=optiplan.__version__, command=args.command,
                         seed=args.seed, settings=_settings(args)).root


def _write_json(document: DocumentMaker, args, path: str = None):
    document.add('run', _run_block(args))
    document.write(path or args.out)
    logger.info('Wrote %s', path or args.out)


def _write_sidecar(args, path: str = None):
    target = path or args.out
    DocumentMaker(RUN_SCHEMA, version=optiplan.__version__, command=args.command, seed=args.seed,
                  settings=_settings(args)).write(str(target) + '.run.json')
    logger.info('Wrote %s', target)


def cmd_gen_traffic(args) -> int:
    _require(args, 'profile', 'out')
    config = translate_to_object(args.profile, TRAFFIC_SCHEMA)
    with make_runner(args.workers) as runner:
        series_map = config.generate(SeededRng(args.seed), runner)
    write_series_csv(series_map, args.out)
    _write_sidecar(args)
    return 0


def _actual_at(series, ts: pd.Timestamp) -> Optional[float]:
    if series is None:
        return None
    offset = (ts - series.start) / pd.Timedelta(hours=1)
    if offset != int(offset) or not 0 <= offset < len(series):
        return None
    return float(series.values[int(offset)])


def cmd_forecast(args) -> int:
    _require(args, 'series', 'out')
    horizons = horizons_type(args.horizons)
    series_map = read_series_csv(args.series)
    actuals = read_series_csv(args.actuals) if args.actuals else {}
    document = DocumentMaker(FORECAST_SCHEMA)
    tunnels = DocumentMaker(parent=document, key='tunnels')
    rows, all_predicted, all_actual = [], [], []
    with make_runner(args.workers) as runner:
        for tunnel in sorted(series_map):
            series = series_map[tunnel]
            trajectory = forecast_trajectory(series, horizons, args.max_lag, runner)
            entry = DocumentMaker(parent=tunnels, key=tunnel)
            predicted, observed, stamps, used = [], [], [], []
            for horizon in trajectory.horizons:
                result = trajectory.forecasts[horizon]
                ts = series.timestamp_at(result.target_index)
                actual = _actual_at(actuals.get(tunnel), ts)
                item = dict(result.to_dict(), timestamp=ts)
                entry.add(str(horizon), item)
                rows.append({'tunnel_id': tunnel, 'timestamp': ts.strftime('%Y-%m-%dT%H:%M:%SZ'),
                             'horizon': horizon, 'forecast': result.mean,
                             'lower': result.mean - result.ci_half_width,
                             'upper': result.mean + result.ci_half_width, 'actual': actual})
                if actual is not None:
                    predicted.append(result.mean)
                    observed.append(actual)
                    stamps.append(ts)
                    used.append(horizon)
            if trajectory.failures:
                entry.add('failed', {str(h): m for h, m in sorted(trajectory.failures.items())})
            if predicted:
                scores = evaluate(predicted, observed, stamps, used)
                if scores.mae_peak is None:
                    logger.warning('Tunnel %s has no test point in the peak window', tunnel)
                entry.add({'mae_overall': scores.mae_overall, 'mae_peak': scores.mae_peak})
                all_predicted.extend(predicted)
                all_actual.extend(observed)
    if all_predicted:
        document.add('mae_overall', float(np.median(relative_errors(all_predicted, all_actual))))
    _write_json(document, args)
    if args.trajectory_csv:
        pd.DataFrame(rows, columns=['tunnel_id', 'timestamp', 'horizon', 'forecast', 'lower', 'upper', 'actual']) \
            .to_csv(args.trajectory_csv, index=False, float_format='%.6f', lineterminator='\n')
    return 0


def cmd_plan(args) -> int:
    _require(args, 'network', 'scenarios', 'out')
    modes = modes_type(args.modes)
    network = load_network(args.network)
    errors = [v for v in validate(network) if v.severity == Severity.ERROR]
    for violation in validate(network):
        if violation.severity == Severity.WARNING:
            logger.warning('%s', violation)
    if errors:
        raise NetworkException('Invalid network: %s' % '; '.join(str(v) for v in errors))
    scenario_set = translate_to_object(args.scenarios, SCENARIO_SCHEMA)
    config = PlannerConfig(args.orderings, args.uncertainty_factor, n_workers=args.workers)
    results = plan_ladder(network, scenario_set, modes, config, args.seed)
    results = {m: results[m] for m in modes}
    write_plan_table(results, args.out)
    _write_sidecar(args)
    if args.json:
        _write_json(plan_document(results), args, args.json)
    return 0


def cmd_qot_gen(args) -> int:
    _require(args, 'out')
    dataset = synth_qot_dataset(args.n, SeededRng(derive_seed(args.seed, 'qot')))
    write_dataset_csv(dataset, args.out)
    _write_sidecar(args)
    return 0


def _specs(args, families: Sequence[str] = None) -> List[ModelSpec]:
    names = families or [s.family.value for s in DEFAULT_SPECS]
    if args.candidates is not None:
        return [ModelSpec(Family(n), n_candidates=args.candidates) for n in names]
    return [ModelSpec(Family(n)) for n in names]


def _family_list(value) -> Optional[List[str]]:
    if not value:
        return None
    names = value if isinstance(value, list) else [v for v in value.replace(' ', '').split(',') if v]
    for name in names:
        if name not in {f.value for f in Family}:
            raise UsageError('unknown model family %r' % name)
    return names


def cmd_qot_train(args) -> int:
    _require(args, 'data', 'out')
    dataset = read_dataset_csv(args.data)
    columns = _column_list(args.columns)
    model = train_model(dataset.features, dataset.labels, ModelSpec(Family(args.family), n_candidates=args.candidates),
                        args.seed, columns)
    save_model(model, args.out)
    _write_sidecar(args)
    return 0


def _column_list(value) -> List[str]:
    if not value:
        return list(FEATURE_COLUMNS)
    columns = value if isinstance(value, list) else [v for v in value.replace(' ', '').split(',') if v]
    unknown = [c for c in columns if c not in FEATURE_COLUMNS]
    if unknown:
        raise UsageError('unknown feature column(s): %s' % ', '.join(unknown))
    return columns


def cmd_qot_eval(args) -> int:
    _require(args, 'data', 'out')
    dataset = read_dataset_csv(args.data)
    with make_runner(args.workers) as runner:
        report = evaluate_models(dataset, _specs(args, _family_list(args.families)), args.splits, seed=args.seed,
                                 runner=runner)
    _write_json(report.to_document(), args)
    if args.pairs_csv:
        report.write_pairs_csv(args.pairs_csv)
    return 0


def cmd_qot_importance(args) -> int:
    _require(args, 'data', 'out')
    dataset = read_dataset_csv(args.data)
    specs = _specs(args, [Family.FOREST.value])
    with make_runner(args.workers) as runner:
        report = evaluate_models(dataset, specs, args.splits, seed=args.seed, runner=runner,
                                 importance_of=Family.FOREST.value)
        document = report.importance.to_document()
        document.add('full', report.model(Family.FOREST.value).to_dict())
        if args.top_k is not None or args.threshold is not None:
            reduced = retrain_top_k(dataset, report.importance, args.top_k, args.threshold, specs,
                                    n_splits=args.splits, seed=args.seed, runner=runner)
            document.add({'selected': reduced.columns, 'reduced': reduced.model(Family.FOREST.value).to_dict()})
    _write_json(document, args)
    return 0


def cmd_qot_predict(args) -> int:
    _require(args, 'model', 'records', 'out')
    model = load_model(args.model)
    frame = read_records_csv(args.records, require_label=False)
    verdicts = predict_records(model, frame, args.threshold)
    pd.DataFrame([v.to_dict() for v in verdicts], columns=['predicted_log10_ber', 'threshold', 'verdict']) \
        .to_csv(args.out, index=False, float_format='%.6f', lineterminator='\n')
    _write_sidecar(args)
    return 0


def _apply_config(args):
    """Re-parse with the --config file's keys as command defaults; explicit flags win."""
    values = read_document(args.config)
    values.pop('schema', None)
    defaults = {k.replace('-', '_'): v for k, v in values.items()}
    unknown = sorted(k for k in defaults if k not in vars(args) or k in INTERNAL_KEYS)
    if unknown:
        raise UsageError('unknown option(s) in %s: %s' % (args.config, ', '.join(unknown)))
    args.parser.set_defaults(**defaults)


def main(argv: Sequence[str] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(args)
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    except UsageError as err:
        print('optiplan: error: %s' % err, file=sys.stderr)
        return 2
    except (OptiplanException, OSError) as err:
        print('optiplan: error: %s' % err, file=sys.stderr)
        return 1

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(args)
    except UsageError as err:
        args.parser.print_usage(sys.stderr)
        print('optiplan: error: %s' % err, file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as err:
        print('optiplan: error: %s' % err, file=sys.stderr)
        return 2
    except (OptiplanException, OSError, ValueError, KeyError) as err:
        print('optiplan: error: %s' % err, file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
