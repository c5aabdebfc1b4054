"""Command line entry point: ``hmmlod <study> [options]``."""

import argparse
import json
import sys

from .correctors import export_decay_csv
from .harness import STUDIES, ConfigError, ExperimentConfig, run_study

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog='hmmlod',
                                     description='Two-level multiscale FEM experiments.')
    parser.add_argument('study', choices=STUDIES)
    parser.add_argument('--config', help='JSON file with ExperimentConfig fields')
    parser.add_argument('--out', help='output path (default: stdout)')
    parser.add_argument('--seed', type=int, help='override the coefficient seed')
    parser.add_argument('--threads', type=int, help='worker threads for corrector solves')
    parser.add_argument('--format', choices=('csv', 'json'), default='csv')
    parser.add_argument('--d', type=int, help='override the dimension')
    parser.add_argument('--n', help='override n values, comma separated')
    parser.add_argument('--r', type=int, help='override the refinement exponent')
    parser.add_argument('--timing', action='store_true',
                        help='fill wall_ms (output is then no longer reproducible)')
    parser.add_argument('--decay-csv', help='decay study: also write (node, layer, tail_norm)')
    return parser


def load_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError('cannot read config %s: %s' % (args.config, exc)) from exc
        if not isinstance(data, dict):
            raise ConfigError('config must be a JSON object')
    data['study'] = args.study
    if args.seed is not None:
        data.setdefault('coefficient', {})['seed'] = args.seed
    if args.threads is not None:
        data['threads'] = args.threads
    if args.d is not None:
        data['d'] = args.d
    if args.r is not None:
        data['r'] = args.r
    if args.n is not None:
        try:
            data['n_values'] = [int(x) for x in args.n.split(',')]
        except ValueError as exc:
            raise ConfigError('bad --n value %r' % args.n) from exc
    return ExperimentConfig.from_dict(data)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print('configuration error: %s' % exc, file=sys.stderr)
        return EXIT_CONFIG
    report = run_study(cfg)
    text = report.to_json(args.timing) if args.format == 'json' else report.to_csv(args.timing)
    if args.out:
        with open(args.out, 'w', newline='') as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.decay_csv and cfg.study == 'decay':
        profiles = {r.extras['node']: r.extras['profile'] for r in report.rows if r.error is None}
        export_decay_csv(profiles, args.decay_csv)
    for check in report.checks:
        if not check.passed:
            print('FAILED %s: value=%r threshold=%r' % (check.name, check.value, check.threshold),
                  file=sys.stderr)
    for row in report.rows:
        if row.error:
            print('row n=%d k=%s aborted: %s' % (row.n, row.k, row.error), file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
