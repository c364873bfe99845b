"""Command-line entry point.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and
``--log-level``; the effective configuration is logged and written to
``run-config.toml`` in the output directory.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 invariant violation or failed gradient check.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .collapse_lab import collapse_demo, gen_synthetic
from .dataset_io import load_dataset, save_dataset
from .errors import (AMPError, ConfigError, FormatError, InvariantViolation, NonFiniteError,
                     SpecError)
from .explainer import build_feature_cache, explain, export_explanation
from .grad_engine import ORACLE_FLOOR, check_gradients, random_check_state
from .modules.config_loader import ConfigLoader
from .trainer import evaluate, fit, initialize_model, rank_histogram, run_ablation, run_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INVARIANT = 3

RUN_CONFIG_FILE = 'run-config.toml'


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--config', type=Path, help='TOML file merged over the defaults')
    common.add_argument('--seed', type=int, help='seed for training and data generation')
    common.add_argument('--out', type=Path, help='output directory')
    common.add_argument('--log-level', default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    parser = _Parser(prog='amp-prototypes',
                     description='Adaptive manifold prototypes: training, evaluation and '
                                 'explanation on synthetic part-structured data.')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('gen-data', parents=[common], help='write a synthetic AMPD dataset')
    p.add_argument('--data', type=Path, help='output dataset path')
    p.add_argument('--classes', type=int)
    p.add_argument('--parts', type=int)
    p.add_argument('--noise', type=float)
    p.add_argument('--samples-per-class', type=int)
    p.add_argument('--visible-parts', type=int, help='parts shown per sample (0 shows all)')
    p.add_argument('--sample-seed', type=int, default=0)

    p = sub.add_parser('train', parents=[common], help='train a model')
    p.add_argument('--data', type=Path, help='training dataset (generated when omitted)')
    p.add_argument('--epochs', type=int)
    p.add_argument('--K', type=int)
    p.add_argument('--lambda', dest='lam', type=float)
    p.add_argument('--gamma1', type=float)
    p.add_argument('--gamma2', type=float)
    p.add_argument('--capacity-lr-scale', type=float,
                   help='capacity step size as a multiple of the scheduled rate')

    p = sub.add_parser('eval', parents=[common], help='evaluate a checkpoint')
    p.add_argument('--checkpoint', type=Path)
    p.add_argument('--data', type=Path)

    p = sub.add_parser('explain', parents=[common], help='explain one sample')
    p.add_argument('--checkpoint', type=Path)
    p.add_argument('--data', type=Path)
    p.add_argument('--sample', type=int)
    p.add_argument('--class', dest='class_override', type=int,
                   help='explain this class instead of the prediction')

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference gradient check')
    p.add_argument('--states', type=int, default=20)
    p.add_argument('--tolerance', type=float, default=1e-5)

    p = sub.add_parser('collapse-demo', parents=[common],
                       help='Euclidean baseline versus manifold prototypes')
    p.add_argument('--epochs', type=int)
    p.add_argument('--noise', type=float)
    p.add_argument('--parts', type=int)
    p.add_argument('--K', type=int)

    p = sub.add_parser('sweep', parents=[common], help='hyperparameter sensitivity sweep')
    p.add_argument('--param', choices=['lambda', 'gamma1', 'gamma2', 'k'])
    p.add_argument('--values', type=_float_list)
    p.add_argument('--epochs', type=int)

    p = sub.add_parser('ablate', parents=[common], help='ablation table')
    p.add_argument('--epochs', type=int)
    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Map command-line flags onto config sections."""
    o: Dict[str, Dict[str, Any]] = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    put('training', 'seed', args.seed)
    put('synthetic', 'seed', args.seed)
    put('paths', 'out', str(args.out) if args.out is not None else None)
    get = lambda name: getattr(args, name, None)  # noqa: E731

    if args.command == 'gen-data':
        put('synthetic', 'classes', get('classes'))
        put('synthetic', 'parts', get('parts'))
        put('synthetic', 'noise', get('noise'))
        put('synthetic', 'samples_per_class', get('samples_per_class'))
        put('synthetic', 'visible_parts', get('visible_parts'))
    elif args.command == 'collapse-demo':
        put('collapse_demo', 'epochs', get('epochs'))
        put('collapse_demo', 'noise', get('noise'))
        put('collapse_demo', 'parts', get('parts'))
        put('collapse_demo', 'K', get('K'))
    else:
        put('training', 'epochs', get('epochs'))
        put('training', 'K', get('K'))
        put('training', 'capacity_lr_scale', get('capacity_lr_scale'))
        put('loss', 'lambda', get('lam'))
        put('loss', 'gamma1', get('gamma1'))
        put('loss', 'gamma2', get('gamma2'))
    if args.command == 'sweep':
        put('sweep', 'param', get('param'))
        put('sweep', 'values', get('values'))
    if args.command == 'explain':
        put('explain', 'sample', get('sample'))
        put('explain', 'class_override', get('class_override'))
    return o


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding='utf-8')
    return path


def _data_path(args, loader: ConfigLoader, out: Path) -> Path:
    explicit = getattr(args, 'data', None)
    return explicit if explicit is not None else out / loader.config['paths']['data']


def _checkpoint_path(args, loader: ConfigLoader, out: Path) -> Path:
    explicit = getattr(args, 'checkpoint', None)
    return explicit if explicit is not None else out / loader.config['paths']['checkpoint']


def _train_test(loader: ConfigLoader):
    spec = loader.synthetic_spec()
    fraction = loader.config['sweep']['test_fraction']
    test_spec = dataclasses.replace(
        spec, samples_per_class=max(1, int(round(spec.samples_per_class * fraction))))
    return gen_synthetic(spec, sample_seed=0), gen_synthetic(test_spec, sample_seed=1)


def _print_rows(rows, stream=None) -> None:
    stream = stream or sys.stdout

    def fmt(v):
        return '-' if v is None else f"{v:.4f}"

    print(f"{'variant':<16} {'accuracy':>9} {'mean_rank':>10} {'sem':>9} {'overlap':>9}",
          file=stream)
    for r in rows:
        print(f"{r.variant:<16} {fmt(r.accuracy):>9} {fmt(r.mean_rank):>10} "
              f"{fmt(r.sem):>9} {fmt(r.overlap):>9}", file=stream)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, loader: ConfigLoader, out: Path) -> int:
    data = gen_synthetic(loader.synthetic_spec(), sample_seed=args.sample_seed)
    path = save_dataset(data, _data_path(args, loader, out))
    print(f"wrote {len(data)} samples to {path}")
    return EXIT_OK


def cmd_train(args, loader: ConfigLoader, out: Path) -> int:
    cfg = loader.training_config()
    path = _data_path(args, loader, out)
    if args.data is not None or path.is_file():
        data = load_dataset(path)
    else:
        logger.info("No dataset at %s; generating synthetic data", path)
        data = gen_synthetic(loader.synthetic_spec())
    model, reports = fit(initialize_model(data, cfg), data, cfg,
                         checkpoint_dir=out / 'checkpoints')
    checkpoint = save_checkpoint(model, _checkpoint_path(args, loader, out))
    _write_json(out / 'reports.json', [r.as_dict() for r in reports])
    ranks = model.active_ranks()
    _write_json(out / 'rank-histogram.json',
                {'K': model.K, 'ranks': ranks, 'histogram': rank_histogram(ranks, model.K)})
    residual = model.orthonormality_residual()
    final_acc = reports[-1].accuracy if reports else float('nan')
    print(f"trained {len(reports)} epochs: accuracy={final_acc:.4f} "
          f"mean_rank={np.mean(ranks):.2f} residual={residual:.3e}")
    print(f"checkpoint: {checkpoint}")
    return EXIT_OK


def cmd_eval(args, loader: ConfigLoader, out: Path) -> int:
    model = load_checkpoint(_checkpoint_path(args, loader, out))
    data = load_dataset(_data_path(args, loader, out))
    result = evaluate(model, data, loader.loss_weights())
    _write_json(out / 'eval.json', {'accuracy': result.accuracy,
                                    'losses': result.losses.as_dict(),
                                    'active_ranks': model.active_ranks()})
    print(f"accuracy={result.accuracy:.4f} ce={result.losses.ce:.6f} "
          f"sem={result.losses.sem:.6f} overlap={result.losses.overlap:.6f}")
    return EXIT_OK


def cmd_explain(args, loader: ConfigLoader, out: Path) -> int:
    model = load_checkpoint(_checkpoint_path(args, loader, out))
    data = load_dataset(_data_path(args, loader, out))
    options = loader.get_section('explain')
    index = options['sample']
    if not 0 <= index < len(data):
        raise ConfigError(f"sample {index} outside [0, {len(data)})")
    cache = build_feature_cache(model, data)
    expl = explain(data.raw[index], model, cache, class_override=options['class_override'])
    export_explanation(expl, out / 'explain')
    print(f"class {expl.explained_class}: evidence={expl.total_evidence:.6f} "
          f"from {len(expl.parts)} parts")
    for p in expl.parts:
        print(f"  k={p.direction:<3} peak=({p.peak[0]},{p.peak[1]}) "
              f"contribution={p.contribution:.6f} patch=sample {p.patch.sample} "
              f"({p.patch.h},{p.patch.w})")
    return EXIT_OK


def cmd_gradcheck(args, loader: ConfigLoader, out: Path) -> int:
    seed = loader.config['training']['seed']
    worst = 0.0
    for i in range(args.states):
        report = check_gradients(random_check_state(seed + i))
        worst = max(worst, report.max_error)
        logger.debug("state %d: max relative error %.3e", seed + i, report.max_error)
    passed = worst <= args.tolerance
    _write_json(out / 'gradcheck.json', {'states': args.states, 'max_relative_error': worst,
                                         'tolerance': args.tolerance, 'floor': ORACLE_FLOOR,
                                         'passed': passed})
    print(f"max relative error: {worst:.3e} ({'PASS' if passed else 'FAIL'})")
    return EXIT_OK if passed else EXIT_INVARIANT


def cmd_collapse_demo(args, loader: ConfigLoader, out: Path) -> int:
    demo = loader.get_section('collapse_demo')
    spec = dataclasses.replace(loader.synthetic_spec(), noise=demo['noise'], parts=demo['parts'])
    cfg = dataclasses.replace(loader.training_config(), K=demo['K'])
    report = collapse_demo(spec, cfg, loader.baseline_config(), epochs=demo['epochs'])
    _write_json(out / 'collapse-report.json', report.as_dict())
    final = report.final
    print(f"baseline: stable rank min {final['baseline_min_stable_rank']:.4f} "
          f"max {final['baseline_max_stable_rank']:.4f}, "
          f"mean prototype cosine {final['baseline_mean_cosine']:.4f}")
    print(f"manifold: residual {final['amp_residual']:.3e}, "
          f"active ranks {final['amp_active_ranks']}")
    return EXIT_OK


def cmd_sweep(args, loader: ConfigLoader, out: Path) -> int:
    options = loader.get_section('sweep')
    train, test = _train_test(loader)
    rows = run_sweep(train, test, loader.training_config(), options['param'], options['values'])
    _write_json(out / 'sweep.json', [r.as_dict() for r in rows])
    _print_rows(rows)
    return EXIT_OK


def cmd_ablate(args, loader: ConfigLoader, out: Path) -> int:
    train, test = _train_test(loader)
    rows = run_ablation(train, test, loader.training_config(), loader.baseline_config())
    _write_json(out / 'ablation.json', [r.as_dict() for r in rows])
    _print_rows(rows)
    return EXIT_OK


COMMANDS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'explain': cmd_explain,
    'gradcheck': cmd_gradcheck,
    'collapse-demo': cmd_collapse_demo,
    'sweep': cmd_sweep,
    'ablate': cmd_ablate,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse *argv*, dispatch the subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s',
                        stream=sys.stderr, force=True)
    loader = ConfigLoader()
    try:
        if args.config is not None:
            loader.load_file(args.config)
        loader.apply_overrides(_overrides(args))
        out = Path(loader.config['paths']['out'])
        loader.dump(out / RUN_CONFIG_FILE)
        logger.info("Effective configuration:\n%s", loader.to_toml())
        return COMMANDS[args.command](args, loader, out)
    except (ConfigError, SpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantViolation, NonFiniteError) as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (FormatError, AMPError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == '__main__':
    main()
