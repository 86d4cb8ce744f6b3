"""
Command-line pipeline: datagen -> train -> eval / trace / export
"""
import argparse
import csv
import logging
import os

import numpy as np

from . import __version__
from .config import RunConfig
from .numcore import RngStream
from .rom import (
    CotangentLift, RomModel, evaluate_mse, fit_cotangent_lift, hamiltonian_trace, latent_rollout, rollout,
    symplecticity_audit, trace_columns, train,
)
from .systems import SnapshotDataset, generate_dataset, initial_state, integrate, make_system
from .util import ConfigError, DivergenceError, GenerationError, NonFiniteStateError, logger

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GENERATION = 3
EXIT_DIVERGENCE = 4

method_variants = {
    'sym': 'henon+greflector',
    'henon-only': 'henon',
    'greflector-only': 'greflector',
}
metrics_columns = ('method', 'variant', 'k', 'mse')


# tables


def format_value(value):
    if isinstance(value, (float, np.floating)):
        return '%.17g' % value
    return str(value)


def write_table(path, columns, rows):
    """
    CSV with a header row; floats carry 17 significant digits
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as csv_file:
        writer = csv.writer(csv_file, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])


def read_table(path):
    with open(path, newline='') as csv_file:
        reader = csv.reader(csv_file)
        columns = next(reader)
        rows = [[float(value) for value in row] for row in reader]
    return columns, np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))


def state_columns(n, prefix=('q', 'p')):
    return ['t'] + ['%s%d' % (prefix[0], index) for index in range(1, n + 1)] + \
        ['%s%d' % (prefix[1], index) for index in range(1, n + 1)]


def write_state_csv(path, times, states, prefix=('q', 'p')):
    states = np.asarray(states, dtype=np.float64)
    n = states.shape[1] // 2
    write_table(path, state_columns(n, prefix), (np.concatenate([[t], state]) for t, state in zip(times, states)))


def read_state_csv(path):
    """
    :return: (times, states)
    """
    _, table = read_table(path)
    return table[:, 0], table[:, 1:]


# commands


def load_config(args):
    if not args.config:
        raise ConfigError('--config is required')
    config = RunConfig.load(args.config)
    return config.override(seed=args.seed, threads=args.threads)


def output_path(args, config, name):
    directory = args.out or (config.io.out if config else '.')
    return os.path.join(directory, name)


def cmd_datagen(args):
    config = load_config(args)
    spec = config.system.to_spec()
    sampling = config.sampling.to_spec()
    dataset = generate_dataset(spec, sampling, config.system.horizon, RngStream(config.sampling.seed),
                               threads=config.training.threads)
    path = output_path(args, config, config.io.dataset)
    dataset.save(path)
    drifts = dataset.energy_drift()
    print('dataset: %s' % path)
    print('trajectories: %d' % dataset.n_traj)
    print('snapshots: %d' % (dataset.n_traj * (dataset.n_steps + 1)))
    for index, drift in enumerate(drifts):
        print('trajectory %d max relative H drift: %.6e' % (index, drift))
    return EXIT_OK


def load_dataset(args, config=None):
    path = args.dataset or (output_path(args, config, config.io.dataset) if config else None)
    if not path:
        raise ConfigError('--dataset is required')
    return SnapshotDataset.load(path)


def cmd_train(args):
    config = load_config(args)
    dataset = load_dataset(args, config)
    if (dataset.spec.kind != config.system.kind or dataset.spec.n != config.system.n
            or not np.isclose(dataset.spec.dt, config.system.dt, rtol=1e-12, atol=0)):
        raise ConfigError('dataset (%s, N=%d, dt=%g) does not match the configured system (%s, N=%d, dt=%g)' % (
            dataset.spec.kind, dataset.spec.n, dataset.spec.dt, config.system.kind, config.system.n, config.system.dt))
    train_config = config.training.to_config()
    model = RomModel.initialize(dataset.spec.n, config.model.k, RngStream(train_config.seed, (0,)),
                                **config.model.build_kwargs())
    checkpoint = args.checkpoint[0] if args.checkpoint else output_path(args, config, config.io.checkpoint)
    losses = output_path(args, config, config.io.losses)
    try:
        model, report = train(model, dataset, train_config)
    except DivergenceError as e:
        e.model.save(checkpoint)
        e.report.write_csv(losses)
        logger.error('Kept last-good checkpoint %s' % checkpoint)
        raise
    model.save(checkpoint)
    report.write_csv(losses)
    audit = symplecticity_audit(model, RngStream(train_config.seed, (3,)))
    print('checkpoint: %s' % checkpoint)
    print('losses: %s' % losses)
    if report.last:
        print('final L_total: %.6e' % report.last['L_total'])
    for name, defect in audit.items():
        print('symplecticity defect %s: %.3e' % (name, defect))
    return EXIT_OK


def load_models(paths, dataset):
    models = []
    for path in paths or ():
        model = RomModel.load(path)
        if model.n != dataset.spec.n:
            raise ConfigError('%s expects n=%d but the dataset has N=%d' % (path, model.n, dataset.spec.n))
        models.append(model)
    latent = {model.k for model in models}
    if len(latent) > 1:
        raise ConfigError('checkpoints disagree on the latent dimension: %s' % sorted(latent))
    return models


def eval_rows(methods, models, dataset, k):
    rows = []
    for method in methods:
        if method == 'cotangent':
            baseline = fit_cotangent_lift(dataset.states, k)
            rows.append((method, CotangentLift.variant, k, evaluate_mse(baseline, dataset.states)))
            continue
        if method not in method_variants:
            raise ConfigError('unknown method %s' % method)
        matching = [model for model in models if model.variant == method_variants[method]]
        if not matching:
            raise ConfigError('no checkpoint of variant %s for method %s' % (method_variants[method], method))
        rows.append((method, matching[0].variant, k, evaluate_mse(matching[0], dataset.states)))
    return rows


def cmd_eval(args):
    dataset = load_dataset(args)
    models = load_models(args.checkpoint, dataset)
    k = models[0].k if models else args.k
    if k is None:
        raise ConfigError('--k is required without a checkpoint')
    if not 1 <= k <= dataset.spec.n:
        raise ConfigError('latent half dimension %d is incompatible with N=%d' % (k, dataset.spec.n))
    methods = [method.strip() for method in args.methods.split(',') if method.strip()]
    rows = eval_rows(methods, models, dataset, k)
    path = output_path(args, None, 'metrics.csv')
    write_table(path, metrics_columns, rows)
    for method, variant, _, mse in rows:
        print('%-16s %-18s MSE %.6e' % (method, variant, mse))
    return EXIT_OK


def trace_inputs(args, steps):
    """
    :return: (x0, system, dt, reference states)
    """
    if args.params:
        config = load_config(args)
        spec = config.system.to_spec()
        params = [float(value) for value in args.params.split(',')]
        system = make_system(spec, params)
        x0 = initial_state(spec, params)
        return x0, system, spec.dt, integrate(system, x0, spec.dt, steps)
    dataset = load_dataset(args)
    index = args.trajectory
    if not 0 <= index < dataset.n_traj:
        raise ConfigError('trajectory %d is not in the dataset' % index)
    return dataset.states[index, 0], dataset.system(index), dataset.spec.dt, dataset.reference(index, steps)


def cmd_trace(args):
    if not args.checkpoint:
        raise ConfigError('--checkpoint is required')
    model = RomModel.load(args.checkpoint[0])
    steps = args.steps
    if steps is None or steps < 0:
        raise ConfigError('--steps must be a non-negative count')
    x0, system, dt, reference = trace_inputs(args, steps)
    if model.n != system.n:
        raise ConfigError('checkpoint expects n=%d, system has N=%d' % (model.n, system.n))
    trace = hamiltonian_trace(model, x0, steps, system, dt=dt, reference=reference, space=args.space)
    path = output_path(args, None, 'trace.csv')
    write_table(path, trace_columns, trace)
    print('trace: %s' % path)
    print('max |H - H0| / |H0|: %.6e' % np.max(np.abs(trace[:, 3])))
    return EXIT_OK


def cmd_export(args):
    if args.format != 'csv':
        raise ConfigError('unknown export format %s' % args.format)
    dataset = load_dataset(args)
    model = RomModel.load(args.checkpoint[0]) if args.checkpoint else None
    if model and model.n != dataset.spec.n:
        raise ConfigError('checkpoint expects n=%d, dataset has N=%d' % (model.n, dataset.spec.n))
    steps = args.steps if args.steps is not None else dataset.n_steps
    if model and steps < 1:
        raise ConfigError('--steps must be at least 1 for a rollout export')
    indices = [args.trajectory] if args.trajectory is not None else range(dataset.n_traj)
    for index in indices:
        if not 0 <= index < dataset.n_traj:
            raise ConfigError('trajectory %d is not in the dataset' % index)
        times = dataset.times
        write_state_csv(output_path(args, None, 'trajectory_%d.csv' % index), times, dataset.states[index])
        if model:
            times = dataset.spec.dt * np.arange(steps + 1)
            write_state_csv(output_path(args, None, 'rollout_%d.csv' % index), times,
                            rollout(model, dataset.states[index, 0], steps))
            write_state_csv(output_path(args, None, 'latent_%d.csv' % index), times,
                            latent_rollout(model, dataset.states[index, 0], steps), prefix=('Q', 'P'))
    print('exported %d trajectories to %s' % (len(indices), args.out or '.'))
    return EXIT_OK


# entry point


def build_arg_parser():
    parser = argparse.ArgumentParser(prog='symplectic-rom', description='Symplectic reduced-order modelling')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='log debugging output')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='log warnings and errors only')
    subparsers = parser.add_subparsers(dest='command', required=True)
    commands = (
        ('datagen', cmd_datagen, 'generate a snapshot dataset'),
        ('train', cmd_train, 'train a model on a dataset'),
        ('eval', cmd_eval, 'compare reconstruction MSE of models and the cotangent lift'),
        ('trace', cmd_trace, 'trace the Hamiltonian along a model rollout'),
        ('export', cmd_export, 'export trajectories and rollouts as CSV'),
    )
    for name, handler, description in commands:
        subparser = subparsers.add_parser(name, help=description, description=description)
        subparser.set_defaults(handler=handler)
        subparser.add_argument('--config', help='YAML run configuration')
        subparser.add_argument('--dataset', help='snapshot dataset container')
        subparser.add_argument('--checkpoint', action='append', help='model checkpoint (repeatable for eval)')
        subparser.add_argument('--out', help='output directory')
        subparser.add_argument('--seed', type=int, help='override the configured seeds')
        subparser.add_argument('--threads', type=int, help='override the configured worker threads')
        subparser.add_argument('--methods', default='sym,cotangent',
                               help='comma-separated: sym, cotangent, greflector-only, henon-only')
        subparser.add_argument('--k', type=int, help='latent half dimension for the cotangent lift')
        subparser.add_argument('--steps', type=int, help='rollout steps')
        subparser.add_argument('--trajectory', type=int, default=None, help='trajectory index')
        subparser.add_argument('--params', help='comma-separated system parameters instead of a dataset')
        subparser.add_argument('--space', default='latent', choices=('latent', 'full'), help='rollout space')
        subparser.add_argument('--format', default='csv', help='export format')
    return parser


def main(argv=None):
    args = build_arg_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    if args.command == 'trace' and args.trajectory is None:
        args.trajectory = 0
    try:
        return args.handler(args)
    except GenerationError as e:
        logger.error(str(e))
        return EXIT_GENERATION
    except (DivergenceError, NonFiniteStateError) as e:
        logger.error(str(e))
        return EXIT_DIVERGENCE
    except ValueError as e:
        logger.error(str(e))
        return EXIT_VALIDATION
