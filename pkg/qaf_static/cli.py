"""Command-line front end of the planted-artifact experiments.

A typical pipeline::

    qaf-static data-gen --config run.cfg --out data/
    qaf-static train --config run.cfg --data data/ --out models/qaf.qaf --method qaf
    qaf-static eval --model models/qaf.qaf --data data/eval.qaf
    qaf-static inspect-alpha --model models/qaf.qaf --out models/alpha.csv

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 numerical failure.
"""
import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import container
from .aggregation import qaf_alpha
from .config import RunConfig, parse_assignment
from .detector import (
    STREAMS, count_parameters, init_detector, load_model, manifest_path, save_model
)
from .errors import ConfigError, NumericalError, QafError, ShapeError
from .gradcheck import ABS_FLOOR, TOLERANCE, run_gradcheck
from .metrics import compute_eer, roc_curve, write_roc_csv
from .rvq import reconstruction_curve, train_codebooks
from .synthdata import SPLITS, gen_dataset, oracle_scores, read_trials, write_trials
from .training import encode_trials, score_trials, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

METHOD_FLAGS = {'mean_pool': 'mean_pool', 'qaf': 'qaf_static', 'qaf_scalar': 'qaf_scalar'}
CODEC_FLAGS = {'frozen': False, 'trainable': True}

# variant name, method, codec trainable, stream
COMPARE_VARIANTS = (
    ('method1_codecF', 'mean_pool', False, 'fused'),
    ('method2_codecF', 'qaf_static', False, 'fused'),
    ('method2_codecT', 'qaf_static', True, 'fused'),
    ('ssl_only', 'qaf_static', True, 'ssl_only'),
    ('codec_only', 'qaf_static', True, 'codec_only'),
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _sidecar(path, suffix):
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = [parse_assignment(text) + ('--set',) for text in args.set]
    method = getattr(args, 'method', None)
    if method:
        overrides.append(('model.method', METHOD_FLAGS[method], '--method'))
    codec = getattr(args, 'codec', None)
    if codec:
        overrides.append(('model.codec_trainable', str(CODEC_FLAGS[codec]), '--codec'))
    stream = getattr(args, 'stream', None)
    if stream:
        overrides.append(('model.stream', stream, '--stream'))
    return cfg.with_overrides(overrides)


def _read_split(data_dir, split):
    path = Path(data_dir) / f'{split}.qaf'
    trials = read_trials(path)
    if not trials:
        raise ShapeError(f'{path}: {split} split has no trials')
    return trials


def _load_stack(args):
    path = Path(args.stack) if args.stack else Path(args.data) / 'stack.qaf'
    return container.read_stack(path)


def _fit(cfg, data_dir, stack):
    """Train one detector variant on the train/dev splits of ``data_dir``."""
    train_trials = _read_split(data_dir, 'train')
    dev_trials = _read_split(data_dir, 'dev')
    num_layers, _, ssl_dim = train_trials[0].ssl_layers.shape
    model = init_detector(cfg.model, stack, ssl_dim, num_layers, seed=cfg.train.seed)
    trainable, frozen = count_parameters(model)
    print(f'parameters: trainable={trainable} frozen={frozen}')
    return train(
        model, encode_trials(train_trials, stack), encode_trials(dev_trials, stack), cfg.train
    )


def _eval_eer(model, trials):
    scored = score_trials(model, encode_trials(trials, model.stack))
    return scored, compute_eer(scored)


def _alpha_matrix(model):
    """``(Q, D)`` quantizer weights; mean pooling is the uniform matrix."""
    q, d = model.stack.num_levels, model.stack.dim
    qaf = model.qaf_params()
    if qaf is None:
        return np.full((q, d), 1.0 / q)
    return np.broadcast_to(qaf_alpha(qaf), (q, d))


def cmd_data_gen(args):
    cfg = _load_config(args)
    out = Path(args.out)
    dataset = gen_dataset(cfg.data)
    for split in SPLITS:
        write_trials(getattr(dataset, split), out / f'{split}.qaf')
    container.write_stack(dataset.stack, out / 'stack.qaf')
    (out / 'manifest.txt').write_text(cfg.to_text(), encoding='utf-8')
    if cfg.data.artifact_level:
        eer, _ = compute_eer(
            oracle_scores(dataset.eval, dataset.stack, cfg.data.artifact_level)
        )
        logger.info('oracle eval EER: %.4f%%', 100 * eer)
    print(f'wrote {", ".join(SPLITS)} splits and ground-truth stack to {out}')
    return EXIT_OK


def cmd_codec_train(args):
    trials = read_trials(args.data)
    latents = [trial.codec_latent for trial in trials]
    stack = train_codebooks(
        latents, args.q, args.k, args.iters, args.seed,
        include_zero_codeword=not args.no_zero_codeword
    )
    container.write_stack(stack, args.out)
    curve = np.mean([reconstruction_curve(z, stack) for z in latents], axis=0)
    for q, mse in enumerate(curve):
        print(f'level {q}: mean squared residual {mse:.6g}')
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    stack = _load_stack(args)
    model, report = _fit(cfg, args.data, stack)
    out = save_model(model, args.out)
    report.write_csv(_sidecar(out, '.train.csv'))
    _sidecar(out, '.summary.txt').write_text(report.summary(), encoding='utf-8')
    _sidecar(out, '.config.txt').write_text(cfg.to_text(), encoding='utf-8')
    logger.info('model manifest: %s', manifest_path(out))
    print(f'best epoch {report.best_epoch}: dev EER% = {100 * report.best_dev_eer:.4f}')
    return EXIT_OK


def cmd_eval(args):
    model = load_model(args.model)
    scored, (eer, threshold) = _eval_eer(model, read_trials(args.data))
    roc = Path(args.roc) if args.roc else _sidecar(args.model, '.roc.csv')
    write_roc_csv(roc_curve(scored), roc)
    logger.info('EER threshold %.6g, ROC written to %s', threshold, roc)
    print(f'EER% = {100 * eer:.4f}')
    return EXIT_OK


def cmd_inspect_alpha(args):
    model = load_model(args.model)
    alpha = _alpha_matrix(model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open('w', newline='', encoding='utf-8') as outf:
        writer = csv.writer(outf, lineterminator='\n')
        writer.writerow(['quantizer', 'dim', 'alpha'])
        for q, row in enumerate(alpha, 1):
            for d, value in enumerate(row):
                writer.writerow([q, d, repr(float(value))])
    summary = _sidecar(out, '.summary.csv')
    with summary.open('w', newline='', encoding='utf-8') as outf:
        writer = csv.writer(outf, lineterminator='\n')
        writer.writerow(['quantizer', 'mean_alpha'])
        for q, value in enumerate(alpha.mean(axis=1), 1):
            writer.writerow([q, repr(float(value))])
            print(f'quantizer {q}: mean alpha {value:.4f}')
    return EXIT_OK


def cmd_gradcheck(args):
    worst = run_gradcheck(args.seed, args.seeds)
    width = max(len(group) for group in worst)
    print(f'{"group":<{width}}  {"strict":>9}  {"resolved":>9}')
    for group, error in worst.items():
        print(f'{group:<{width}}  {error.strict:9.3e}  {error.resolved:9.3e}')
    below_floor = [
        group for group, error in worst.items()
        if error.strict >= TOLERANCE > error.resolved
    ]
    if below_floor:
        logger.warning(
            'only differences below the %g round-off floor exceed %g: %s',
            ABS_FLOOR, TOLERANCE, ', '.join(below_floor)
        )
    failed = [group for group, error in worst.items() if error.resolved >= TOLERANCE]
    if failed:
        raise NumericalError(
            f'{len(failed)} groups above tolerance {TOLERANCE:g}: {", ".join(failed)}',
            stage='gradcheck'
        )
    return EXIT_OK


def cmd_compare(args):
    cfg = _load_config(args)
    stack = _load_stack(args)
    manifest = Path(args.data) / 'manifest.txt'
    data_cfg = RunConfig.from_file(manifest).data if manifest.is_file() else cfg.data
    level = data_cfg.artifact_level
    eval_trials = _read_split(args.data, 'eval')
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, method, trainable, stream in COMPARE_VARIANTS:
        logger.info('training variant %s', name)
        variant = cfg.with_overrides([
            ('model.method', method), ('model.codec_trainable', str(trainable)),
            ('model.stream', stream),
        ])
        model, report = _fit(variant, args.data, stack)
        save_model(model, out / f'{name}.qaf')
        _, (eval_eer, _) = _eval_eer(model, eval_trials)
        alpha = ''
        if level and method != 'mean_pool':
            alpha = repr(float(_alpha_matrix(model)[level - 1].mean()))
        rows.append([name, repr(report.best_dev_eer), repr(eval_eer), report.best_epoch, alpha])
        print(f'{name}: eval EER% = {100 * eval_eer:.4f}')
    with (out / 'comparison.csv').open('w', newline='', encoding='utf-8') as outf:
        writer = csv.writer(outf, lineterminator='\n')
        writer.writerow(['variant', 'dev_eer', 'eval_eer', 'best_epoch', 'alpha_at_artifact_level'])
        writer.writerows(rows)
    return EXIT_OK


def _add_config_flags(parser):
    parser.add_argument('--config', help='key=value run configuration file')
    parser.add_argument(
        '--set', action='append', default=[], metavar='KEY=VALUE',
        help='override one config key, e.g. --set train.patience=3'
    )


def build_parser():
    parser = _Parser(prog='qaf-static', description=__doc__.splitlines()[0])
    parser.add_argument(
        '--log-level', default='INFO',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='root logger level'
    )
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=_Parser)
    commands.required = True

    p = commands.add_parser('data-gen', help='generate train/dev/eval splits')
    _add_config_flags(p)
    p.add_argument('--out', required=True, help='output directory')
    p.set_defaults(func=cmd_data_gen)

    p = commands.add_parser('codec-train', help='fit a quantizer stack by residual k-means')
    p.add_argument('--data', required=True, help='trials file whose latents are quantized')
    p.add_argument('--q', type=int, required=True, help='number of levels')
    p.add_argument('--k', type=int, required=True, help='codewords per level')
    p.add_argument('--out', required=True, help='output stack file')
    p.add_argument('--iters', type=int, default=25, help='Lloyd iterations per level')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--no-zero-codeword', action='store_true',
                   help='do not pin codeword 0 of every level to zero')
    p.set_defaults(func=cmd_codec_train)

    for name, func, help_text in (
        ('train', cmd_train, 'train one detector variant'),
        ('compare', cmd_compare, 'train every method variant and tabulate EERs'),
    ):
        p = commands.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.add_argument('--data', required=True, help='directory written by data-gen')
        p.add_argument('--out', required=True,
                       help='model file' if name == 'train' else 'output directory')
        p.add_argument('--stack', help='quantizer stack file (default: DATA/stack.qaf)')
        if name == 'train':
            p.add_argument('--method', choices=sorted(METHOD_FLAGS))
            p.add_argument('--codec', choices=sorted(CODEC_FLAGS))
            p.add_argument('--stream', choices=STREAMS)
        p.set_defaults(func=func)

    p = commands.add_parser('eval', help='score a trials file and report the EER')
    p.add_argument('--model', required=True)
    p.add_argument('--data', required=True, help='trials file')
    p.add_argument('--roc', help='ROC CSV path (default: MODEL.roc.csv)')
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser('inspect-alpha', help='write the learned quantizer weights')
    p.add_argument('--model', required=True)
    p.add_argument('--out', required=True, help='alpha CSV path')
    p.set_defaults(func=cmd_inspect_alpha)

    p = commands.add_parser('gradcheck', help='finite-difference gradient checks')
    p.add_argument('--seed', type=int, default=0, help='first seed')
    p.add_argument('--seeds', type=int, default=20, help='number of seeds')
    p.set_defaults(func=cmd_gradcheck)
    return parser


def run(argv=None):
    """Run one command and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return error.code
    logging.basicConfig(
        level=args.log_level,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s'
    )
    try:
        return args.func(args)
    except ConfigError as error:
        logger.error('%s: %s', args.command, error)
        return EXIT_USAGE
    except NumericalError as error:
        logger.error('%s: %s', args.command, error)
        return EXIT_NUMERICAL
    except (QafError, OSError) as error:
        logger.error('%s: %s', args.command, error)
        return EXIT_DATA


def main():
    sys.exit(run())
