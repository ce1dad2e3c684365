#!/usr/bin/env python3
'''
Usage: qamplify [-v|-q] [--log-file PATH] COMMAND ...

Commands: preprocess, train, evaluate, explain, crossval, circuit, benchmark.
Exit codes: 0 success, 2 usage or schema error, 3 unusable data,
4 numeric failure.
'''
import os
import sys
import numpy as np
from argparse import ArgumentParser, ArgumentTypeError, Namespace
from typing import Any, Callable, Dict, List, Optional, Sequence

from . import __version__
from .helper import Log, FileWrite, QAmplifyError, SchemaError, read_json
from .hybrid import HybridModel, LogisticRegression, TrainConfig, train
from .metrics import (
    classification_metrics, confusion, crossval_compare, hard_labels,
    roc_auc, roc_csv, roc_points, ScoreFn)
from .explain import LimeConfig, lime_explain, shapley_exact
from .pipeline import (
    FeatureFrame, SamplingConfig, load_processed, preprocess, split_paths)
from .qsim import (
    SELWeights, class_probabilities, describe, expectation_z, run_circuit)

SEED_ENV = 'QAMPLIFY_SEED'
DEFAULT_SEED = 42
MODEL_OPTIONS = ('n_qubits', 'sel_layers', 'pre_rotation',
                 'preprocessing_artifact_ref')


def InputFile(string: str) -> str:
    if os.path.isfile(string):
        return string
    raise ArgumentTypeError(
        'File does not exist: "{}"'.format(os.path.abspath(string)))


class Cli(ArgumentParser):
    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self._commands = None  # type: Any

    def arg(self, *args: Any, **kwargs: Any) -> None:
        self.add_argument(*args, **kwargs)

    def arg_bool(self, *args: Any, **kwargs: Any) -> None:
        self.add_argument(*args, **kwargs, action='store_true')

    def arg_file(self, *args: Any, **kwargs: Any) -> None:
        ''' Path of an existing input file. '''
        self.add_argument(*args, **kwargs, type=InputFile)

    def command(
        self,
        name: str,
        func: Callable[[Namespace], None],
        help: str
    ) -> 'Cli':
        if self._commands is None:
            self._commands = self.add_subparsers(
                dest='command', metavar='COMMAND', parser_class=Cli)
            self._commands.required = True
        sub = self._commands.add_parser(name, help=help, description=help)
        sub.set_defaults(func=func)
        return sub

    def parse(self, argv: Optional[Sequence[str]] = None) -> Namespace:
        return self.parse_args(argv)


class RunConfig:
    '''
    Everything one invocation needs: train, sampling and LIME settings,
    model options, the artifact reference and the effective seed.
    QAMPLIFY_SEED beats the --seed flag, which beats the config file.
    '''

    def __init__(
        self,
        train: Optional[TrainConfig] = None,
        sampling: Optional[SamplingConfig] = None,
        lime: Optional[LimeConfig] = None,
        model: Optional[Dict[str, Any]] = None,
        seed: int = DEFAULT_SEED,
        paths: Optional[Dict[str, Optional[str]]] = None
    ) -> None:
        self.seed = seed
        self.train = train or TrainConfig()
        self.sampling = sampling or SamplingConfig()
        self.lime = lime or LimeConfig()
        self.model = dict(model or {})
        self.paths = dict(paths or {})
        self.train.seed = self.sampling.seed = self.lime.seed = seed

    @property
    def preprocessing_artifact_ref(self) -> Optional[str]:
        return self.model.get('preprocessing_artifact_ref')

    def inputs(self) -> List[Optional[str]]:
        ''' Paths hashed into the provenance block, in a fixed order. '''
        return [self.paths[k] for k in sorted(self.paths)]

    @staticmethod
    def resolve_seed(flag: Optional[int], from_file: Optional[int]) -> int:
        env = os.environ.get(SEED_ENV)
        if env not in (None, ''):
            try:
                return int(env)
            except ValueError:
                raise SchemaError('{} must be an integer, got "{}"'.format(
                    SEED_ENV, env))
        if flag is not None:
            return flag
        return DEFAULT_SEED if from_file is None else int(from_file)

    @staticmethod
    def load(
        config_file: Optional[str],
        seed_flag: Optional[int] = None,
        **paths: Optional[str]
    ) -> 'RunConfig':
        '''
        Config JSON: TrainConfig keys and model options at the top level,
        optional "sampling" and "lime" objects.
        '''
        data = read_json(config_file) if config_file else {}
        data = dict(data)
        sampling = data.pop('sampling', {})
        lime = data.pop('lime', {})
        model = {k: data.pop(k) for k in MODEL_OPTIONS if k in data}
        for key in ('tool_version', 'input_hashes'):
            data.pop(key, None)
        seed = RunConfig.resolve_seed(seed_flag, data.pop('seed', None))
        if config_file:
            paths['config'] = config_file
        cfg = RunConfig(train=TrainConfig.from_dict(data),
                        sampling=SamplingConfig.from_dict(sampling),
                        lime=LimeConfig.from_dict(lime),
                        model=model, seed=seed, paths=paths)
        Log.debug('Run config: {}'.format(cfg.to_dict()))
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return {'seed': self.seed, 'train': self.train.to_dict(),
                'sampling': self.sampling.to_dict(),
                'lime': self.lime.to_dict(), 'model': self.model,
                'paths': self.paths}

    def build_model(self) -> HybridModel:
        model = HybridModel.build(
            self.seed,
            n_qubits=int(self.model.get('n_qubits', 2)),
            sel_layers=int(self.model.get('sel_layers', 1)),
            pre_rotation=bool(self.model.get('pre_rotation', False)))
        model.preprocessing_artifact_ref = self.preprocessing_artifact_ref
        return model


def _load_model(fname: str) -> HybridModel:
    return HybridModel.from_dict(read_json(fname))


# Commands

def cmd_preprocess(args: Namespace) -> None:
    cfg = RunConfig.load(args.config, args.seed, input=args.input)
    frame = FeatureFrame.load(args.input)
    Log.info('Loaded {} clean rows (class counts {})'.format(
        len(frame), frame.class_counts()))
    train_pcs, test_pcs, art = preprocess(
        frame, cfg.sampling, vif_threshold=args.vif_threshold,
        n_components=args.components)
    if args.out_data:
        train_file, test_file = split_paths(args.out_data)
        FileWrite.text(train_file, train_pcs.to_csv())
        FileWrite.text(test_file, test_pcs.to_csv())
    if args.out_artifacts:
        FileWrite.json(args.out_artifacts, art.to_dict(), seed=cfg.seed,
                       inputs=cfg.inputs())
    print('train class counts: {}'.format(train_pcs.class_counts()))
    print('test class counts: {}'.format(test_pcs.class_counts()))
    print('kept columns: {}'.format(', '.join(art.kept_columns)))
    print('explained variance: {}'.format(', '.join(
        '{:.4f}'.format(x) for x in art.explained_variance_ratio)))


def cmd_train(args: Namespace) -> None:
    cfg = RunConfig.load(args.config, args.seed, data=args.data)
    x, y, _ = load_processed(args.data)
    model = cfg.build_model()
    model, history = train(model, x, y, cfg.train)
    FileWrite.json(args.model, model.to_dict(), seed=cfg.seed,
                   inputs=cfg.inputs())
    if args.history:
        FileWrite.text(args.history, history.to_csv())
    print('stopped epoch: {stopped_epoch}\nbest epoch: {best_epoch}\n'
          'best val loss: {best_val_loss:.6f}'.format(**history.summary()))


def cmd_evaluate(args: Namespace) -> None:
    model = _load_model(args.model)
    x, y, _ = load_processed(args.data, model.n_features)
    p_backorder = model.predict_proba(x)[:, 1]
    report = classification_metrics(confusion(y, hard_labels(p_backorder)),
                                    args.alpha)
    if np.unique(y).size < 2:
        Log.warn('Evaluation data holds a single class, AUC omitted')
    else:
        report.roc_auc = roc_auc(y, p_backorder)
        if args.roc:
            FileWrite.text(args.roc, roc_csv(roc_points(y, p_backorder)))
    if args.report:
        FileWrite.json(args.report, report.to_dict(), seed=model.seed,
                       inputs=[args.data, args.model])
    print(report)


def _background(args: Namespace, x: np.ndarray, n_features: int) \
        -> np.ndarray:
    if args.background:
        bg, _, _ = load_processed(args.background, n_features)
        return bg.mean(axis=0)
    return x.mean(axis=0)


def cmd_explain(args: Namespace) -> None:
    model = _load_model(args.model)
    x, _, names = load_processed(args.data, model.n_features)
    if not 0 <= args.row < len(x):
        raise SchemaError('Row {} out of range, data has {} rows'.format(
            args.row, len(x)))
    cfg = RunConfig.load(None, args.seed)

    def p_backorder(batch: np.ndarray) -> np.ndarray:
        return model.predict_proba(batch)[:, 1]

    if args.method == 'shap':
        attr = shapley_exact(p_backorder, x[args.row],
                             _background(args, x, model.n_features), names)
        attr.check_efficiency()
    else:
        lime_cfg = LimeConfig(args.samples, args.kernel_width, cfg.seed)
        attr = lime_explain(p_backorder, x[args.row], lime_cfg, names)
    payload = attr.to_dict()
    payload['row'] = args.row
    FileWrite.json(args.out, payload, seed=cfg.seed,
                   inputs=[args.data, args.model, args.background])
    if args.csv:
        FileWrite.text(args.csv, attr.to_csv())
    print('p_backorder: {:.6f}  base: {:.6f}'.format(attr.prediction,
                                                      attr.base_value))
    print(attr.bars())


def _hybrid_spec(cfg: RunConfig) -> Callable[..., ScoreFn]:
    def fit(x: np.ndarray, y: np.ndarray, seed: int) -> ScoreFn:
        run = RunConfig(train=TrainConfig.from_dict(cfg.train.to_dict()),
                        model=cfg.model, seed=seed)
        model, _ = train(run.build_model(), x, y, run.train)
        return lambda batch: model.predict_proba(batch)[:, 1]
    return fit


def _logreg_spec(x: np.ndarray, y: np.ndarray, seed: int) -> ScoreFn:
    return LogisticRegression().fit(x, y).predict_proba


def _random_spec(x: np.ndarray, y: np.ndarray, seed: int) -> ScoreFn:
    rng = np.random.default_rng(seed)
    return lambda batch: rng.random(len(batch))


def cmd_crossval(args: Namespace) -> None:
    if args.folds < 2:
        raise SchemaError('--folds needs at least 2, got {}'.format(
            args.folds))
    cfg = RunConfig.load(args.config, args.seed, data=args.data)
    x, y, _ = load_processed(args.data)
    baseline = {'logreg': _logreg_spec, 'random': _random_spec,
                'self': _hybrid_spec(cfg)}[args.against]
    results, folds = crossval_compare(_hybrid_spec(cfg), baseline, x, y,
                                      args.folds, cfg.seed)
    payload = {}  # type: Dict[str, Any]
    for metric, res in results.items():
        payload[metric] = res.to_dict()
    payload['against'] = args.against
    payload['folds'] = args.folds
    payload['fold_index'] = folds.tolist()
    if args.out:
        FileWrite.json(args.out, payload, seed=cfg.seed, inputs=cfg.inputs())
    for metric, res in sorted(results.items()):
        if res.zero_variance:
            print('{}: zero variance, no test'.format(metric))
        else:
            print('{}: t = {:.4f}, p = {:.4g}, dof = {}'.format(
                metric, res.t_statistic, res.p_value,
                res.degrees_of_freedom))


def _parse_vector(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(',')]
    except ValueError:
        raise SchemaError('Cannot parse input vector "{}"'.format(text))
    if not all(np.isfinite(values)):
        raise SchemaError('Input vector must be finite')
    if not any(values):
        raise SchemaError('Input vector must not be all zero')
    return values


def cmd_circuit(args: Namespace) -> None:
    values = _parse_vector(args.input)
    pre_rotation = args.pre_rotation
    if args.weights:
        data = read_json(args.weights)
        if 'quantum_weights' in data:  # full model file
            pre_rotation = pre_rotation or bool(data.get('pre_rotation'))
            data = data['quantum_weights']
        weights = SELWeights.from_dict(data)
    else:
        weights = SELWeights.zeros(1, 2)
    embedded, final = run_circuit(values, weights, pre_rotation=pre_rotation)
    expect = [expectation_z(final, q) for q in range(final.n_qubits)]
    probs = class_probabilities(expect[0])
    print('gates:\n' + describe(weights, pre_rotation=pre_rotation))
    print('embedded state:\n{}'.format(embedded))
    print('after SEL:\n{}'.format(final))
    print('<Z>: [{}]'.format(', '.join('{:.6f}'.format(e) for e in expect)))
    print('probabilities (not backorder, backorder): ({:.6f}, {:.6f})'
          .format(probs.p_not_backorder, probs.p_backorder))


def cmd_benchmark(args: Namespace) -> None:
    cfg = RunConfig.load(None, args.seed)
    x_train, y_train, _ = load_processed(args.train, args.features)
    x_test, y_test, _ = load_processed(args.test, args.features)
    lr = LogisticRegression(args.iterations, args.learning_rate).fit(
        x_train, y_train)
    proba = lr.predict_proba(x_test)
    report = classification_metrics(confusion(y_test, hard_labels(proba)))
    if np.unique(y_test).size < 2:
        Log.warn('Test data holds a single class, AUC omitted')
    else:
        report.roc_auc = roc_auc(y_test, proba)
    if args.report:
        FileWrite.json(args.report, report.to_dict(), seed=cfg.seed,
                       inputs=[args.train, args.test])
    print(report)


def build_parser() -> Cli:
    cli = Cli(prog='qamplify', description=__doc__.strip().split('\n')[0])
    cli.arg('--version', action='version', version=__version__)
    cli.arg_bool('-v', '--verbose', help='Log debug messages')
    cli.arg_bool('-q', '--quiet', help='Log errors only')
    cli.arg('--log-file', help='Append log lines to this file')

    cmd = cli.command('preprocess', cmd_preprocess,
                      'Clean, transform and split a raw backorder CSV')
    cmd.arg_file('--input', required=True, help='Raw CSV (Kaggle header)')
    cmd.arg('--out-data', help='Writes <stem>_train.csv and <stem>_test.csv')
    cmd.arg('--out-artifacts', help='Preprocessing artifacts JSON')
    cmd.arg_file('--config', help='Run config JSON ("sampling" object)')
    cmd.arg('--seed', type=int)
    cmd.arg('--vif-threshold', type=float, default=5.0)
    cmd.arg('--components', type=int, default=4)

    cmd = cli.command('train', cmd_train, 'Train the hybrid model')
    cmd.arg_file('--data', required=True, help='Processed training CSV')
    cmd.arg_file('--config', help='Train config JSON')
    cmd.arg('--model', required=True, help='Output model JSON')
    cmd.arg('--history', help='Output per-epoch history CSV')
    cmd.arg('--seed', type=int)

    cmd = cli.command('evaluate', cmd_evaluate, 'Score a model on a CSV')
    cmd.arg_file('--model', required=True)
    cmd.arg_file('--data', required=True)
    cmd.arg('--report', help='Output metrics JSON')
    cmd.arg('--roc', help='Output ROC points CSV')
    cmd.arg('--alpha', type=float, default=0.1, help='IBA weight')

    cmd = cli.command('explain', cmd_explain, 'Explain one prediction')
    cmd.arg_file('--model', required=True)
    cmd.arg_file('--data', required=True)
    cmd.arg('--row', type=int, required=True, help='0-based data row')
    cmd.arg('--method', choices=('lime', 'shap'), default='shap')
    cmd.arg('--out', required=True, help='Output attribution JSON')
    cmd.arg('--csv', help='Output attribution CSV')
    cmd.arg_file('--background', help='CSV whose column means are the '
                 'Shapley baseline (default: --data)')
    cmd.arg('--samples', type=int, default=5000, help='LIME samples')
    cmd.arg('--kernel-width', type=float, help='LIME kernel width')
    cmd.arg('--seed', type=int)

    cmd = cli.command('crossval', cmd_crossval,
                      'Paired t-test on k-fold scores against a baseline')
    cmd.arg_file('--data', required=True)
    cmd.arg('--folds', type=int, default=10)
    cmd.arg('--against', choices=('logreg', 'self', 'random'),
            default='logreg')
    cmd.arg_file('--config', help='Train config JSON')
    cmd.arg('--out', help='Output test results JSON')
    cmd.arg('--seed', type=int)

    cmd = cli.command('circuit', cmd_circuit,
                      'Print the quantum layer for one input')
    cmd.arg('--input', required=True, help='"a,b,c,d"')
    cmd.arg_file('--weights', help='SEL weights or model JSON '
                 '(default: zero angles, 1 layer, 2 qubits)')
    cmd.arg_bool('--pre-rotation', help='RY(pi/2) on every qubit first')

    cmd = cli.command('benchmark', cmd_benchmark,
                      'Logistic-regression baseline on processed splits')
    cmd.arg_file('--train', required=True)
    cmd.arg_file('--test', required=True)
    cmd.arg('--report', help='Output metrics JSON')
    cmd.arg('--features', type=int, default=4)
    cmd.arg('--iterations', type=int, default=1000)
    cmd.arg('--learning-rate', type=float, default=0.1)
    cmd.arg('--seed', type=int)
    return cli


def main(argv: Optional[Sequence[str]] = None) -> int:
    ''' Run one command, return its exit code. '''
    args = build_parser().parse(argv)
    Log.LEVEL = 4 if args.verbose else 0 if args.quiet else 1
    Log.FILE = args.log_file
    try:
        args.func(args)
    except QAmplifyError as e:
        Log.error(e)
        return e.exit_code
    return 0


def _cli() -> None:
    ''' CLI entry point. '''
    sys.exit(main())


if __name__ == '__main__':
    _cli()
