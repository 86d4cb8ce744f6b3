"""
Symplectic reduced-order model: autoencoder on the composite embedding, latent Hénon flow,
multi-step losses with a Hamiltonian penalty, training, the cotangent-lift baseline and metrics
"""
import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .numcore import AdamState, RngStream, adam_step, end_epoch, pack, unpack_into
from .storage import read_arrays, write_arrays
from .symplectic import CompositeEmbedding, GReflectorStack, HenonNet, Inclusion, symplecticity_defect
from .systems import HamiltonianSystem
from .util import (
    ConfigError, DivergenceError, NonFiniteStateError, add_into, as_batch, check_dimension, from_batch, logger,
)

__all__ = (
    'RomModel', 'TrainConfig', 'LossReport', 'CotangentLift',
    'encode', 'decode', 'flow_step', 'rollout', 'latent_rollout',
    'loss_recon', 'loss_components', 'loss_rom_multistep', 'loss_ham_multistep', 'loss_total', 'loss_gradient',
    'train', 'fit_cotangent_lift', 'evaluate_mse', 'hamiltonian_trace', 'symplecticity_audit',
)

variants = ('henon+greflector', 'henon', 'greflector')
loss_columns = ('epoch', 'L_r', 'L_f', 'L_rom', 'L_ham', 'L_total', 'seconds')
trace_columns = ('t', 'H', 'dH', 'rel_dH', 'H_ref', 'error')


class RomModel:
    """
    Encoder tau o G o H, decoder H^-1 o G^-1 o iota sharing one set of parameters, and a latent flow
    """
    kind = 'rom-checkpoint'

    def __init__(self, embedding, flow):
        if flow.dim != 2 * embedding.k:
            raise ValueError('flow acts on R^%d but the latent space is R^%d' % (flow.dim, 2 * embedding.k))
        self.embedding = embedding
        self.flow = flow

    def __repr__(self):
        return '<RomModel %s R^%d -> R^%d>' % (self.variant, 2 * self.n, 2 * self.k)

    @classmethod
    def initialize(cls, n, k, rng, variant='henon+greflector', henon_widths=(64,), henon_layers=2,
                   reflectors=10, flow_widths=(16,), flow_layers=2, identity=True):
        """
        Builds a model that starts as encoder = tau and decoder = iota when identity is set
        :param rng: RngStream; components draw from child streams 0 (H), 1 (G) and 2 (flow)
        """
        if variant not in variants:
            raise ValueError('unknown model variant %s' % variant)
        henon = None
        reflector_stack = None
        if 'henon' in variant:
            henon = HenonNet.initialize(n, henon_widths, henon_layers, rng.child(0), identity=identity)
        if 'greflector' in variant:
            reflector_stack = GReflectorStack.initialize(2 * n, reflectors, rng.child(1), identity=identity)
        flow = HenonNet.initialize(k, flow_widths, flow_layers, rng.child(2), identity=identity)
        return cls(CompositeEmbedding(Inclusion(n, k), henon=henon, reflectors=reflector_stack), flow)

    @property
    def n(self):
        return self.embedding.n

    @property
    def k(self):
        return self.embedding.k

    @property
    def variant(self):
        return self.embedding.variant

    def parameters(self):
        return self.embedding.parameters() + self.flow.parameters()

    def encode(self, x):
        return self.embedding.project(x)

    def decode(self, y):
        return self.embedding.lift(y)

    def flow_step(self, y):
        return self.flow.apply(y)

    def flow_inverse(self, y):
        return self.flow.inverse(y)

    def get_vector(self):
        return pack(self.parameters())

    def set_vector(self, vector):
        unpack_into(self.parameters(), vector)

    def describe(self):
        return {
            'container': self.kind,
            'n': self.n,
            'k': self.k,
            'variant': self.variant,
            'henon': self.embedding.henon.describe() if self.embedding.henon else None,
            'reflectors': self.embedding.reflectors.describe() if self.embedding.reflectors else None,
            'flow': self.flow.describe(),
            'component_order': ['henon', 'reflectors', 'flow'],
        }

    def save(self, path):
        params = self.parameters()
        write_arrays(path, [('p%d' % index, param) for index, param in enumerate(params)], self.describe())

    @classmethod
    def load(cls, path):
        metadata, arrays = read_arrays(path)
        if metadata.get('container') != cls.kind:
            raise ConfigError('%s is not a model checkpoint' % path)
        henon = HenonNet.from_description(metadata['henon']) if metadata['henon'] else None
        reflectors = GReflectorStack.from_description(metadata['reflectors']) if metadata['reflectors'] else None
        embedding = CompositeEmbedding(Inclusion(metadata['n'], metadata['k']), henon=henon, reflectors=reflectors)
        model = cls(embedding, HenonNet.from_description(metadata['flow']))
        params = model.parameters()
        if len(params) != len(arrays):
            raise ConfigError('%s holds %d arrays, the model has %d' % (path, len(arrays), len(params)))
        for param, (name, array) in zip(params, arrays):
            if param.shape != array.shape:
                raise ConfigError('%s: array %s has shape %s, expected %s' % (path, name, array.shape, param.shape))
            param[...] = array
        return model


def encode(model, x):
    return model.encode(x)


def decode(model, y):
    return model.decode(y)


def flow_step(model, y):
    return model.flow_step(y)


def latent_rollout(model, x0, steps):
    """
    Latent states y_0 = encode(x0), y_{j+1} = flow(y_j)
    :return: array of shape (steps + 1, 2k)
    """
    y = model.encode(x0)
    states = [y]
    for step in range(1, steps + 1):
        y = model.flow_step(y)
        if not np.all(np.isfinite(y)):
            raise NonFiniteStateError(step)
        states.append(y)
    return np.array(states)


def rollout(model, x0, steps, space='latent'):
    """
    Autoregressive prediction from x0
    :param space: 'latent' iterates the flow and decodes each state; 'full' re-encodes every decoded state
    :return: array of shape (steps + 1, 2n) whose first row is x0
    """
    if steps < 1:
        raise ValueError('rollout needs at least one step')
    x0 = np.asarray(x0, dtype=np.float64)
    check_dimension(x0, 2 * model.n)
    states = [x0]
    if space == 'latent':
        for step, y in enumerate(latent_rollout(model, x0, steps)[1:], start=1):
            x = model.decode(y)
            if not np.all(np.isfinite(x)):
                raise NonFiniteStateError(step)
            states.append(x)
    elif space == 'full':
        x = x0
        for step in range(1, steps + 1):
            x = model.decode(model.flow_step(model.encode(x)))
            if not np.all(np.isfinite(x)):
                raise NonFiniteStateError(step)
            states.append(x)
    else:
        raise ValueError('unknown rollout space %s' % space)
    return np.array(states)


# losses


def as_trajectories(trajectories, unroll):
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.ndim == 2:
        trajectories = trajectories[np.newaxis]
    if trajectories.ndim != 3 or trajectories.shape[0] == 0 or trajectories.shape[1] == 0:
        raise ValueError('expected a non-empty (trajectories, snapshots, state) array')
    if unroll < 1:
        raise ValueError('unroll steps must be at least 1')
    if trajectories.shape[1] <= unroll:
        raise ValueError('trajectories of %d snapshots cannot be unrolled %d steps' % (trajectories.shape[1], unroll))
    return trajectories


def as_systems(systems, count):
    if systems is None:
        return None
    if isinstance(systems, HamiltonianSystem):
        return [systems] * count
    systems = list(systems)
    if len(systems) != count:
        raise ValueError('%d systems given for %d trajectories' % (len(systems), count))
    return systems


def draw_noise(rng, sigma, shape):
    if sigma < 0:
        raise ValueError('noise level must be non-negative')
    if sigma == 0:
        return np.zeros(shape)
    if rng is None:
        raise ValueError('noise injection needs a random stream')
    return rng.normal(sigma, shape)


def energies(systems, owners, states, with_gradient):
    """
    Hamiltonian values (and gradients) of states, each evaluated with its owning trajectory's system
    """
    values = np.empty(len(states))
    gradients = np.empty_like(states) if with_gradient else None
    groups = {}
    for row, owner in enumerate(owners):
        system = systems[owner]
        groups.setdefault(id(system), (system, []))[1].append(row)
    for system, rows in groups.values():
        rows = np.array(rows)
        values[rows] = system.hamiltonian(states[rows])
        if with_gradient:
            gradients[rows] = system.gradient(states[rows])
    return values, gradients


class LossObjective:
    """
    lambda1 (L_r + L_f) + lambda2 (L_ham,r + L_ham,f) over windows (x_i, ..., x_{i+M}).

    Each window reconstructs its start snapshot; the last window of a trajectory also reconstructs
    the trailing M snapshots, so the full set of windows reconstructs every snapshot exactly once.
    """

    def __init__(self, model, trajectories, unroll, weights=(1.0, 0.0), systems=None):
        self.model = model
        self.trajectories = as_trajectories(trajectories, unroll)
        check_dimension(self.trajectories, 2 * model.n, 'trajectory state')
        self.unroll = unroll
        self.weights = check_weights(weights)
        self.systems = as_systems(systems, len(self.trajectories))
        self.anchors = None
        if self.systems is not None:
            owners = np.arange(len(self.trajectories))
            self.anchors, _ = energies(self.systems, owners, self.trajectories[:, 0], False)

    def windows(self):
        count = self.trajectories.shape[1] - self.unroll
        return [(trajectory, start) for trajectory in range(len(self.trajectories)) for start in range(count)]

    def owned_rows(self, windows):
        last = self.trajectories.shape[1] - self.unroll - 1
        rows = []
        for trajectory, start in windows:
            rows.append((trajectory, start))
            if start == last:
                rows.extend((trajectory, start + j) for j in range(1, self.unroll + 1))
        return rows

    def evaluate(self, windows, noise, need_grad=True, threads=1):
        """
        :param windows: list of (trajectory, start) pairs
        :param noise: perturbations of the window start states, shape (len(windows), 2n)
        :return: (loss components, gradients aligned with model.parameters() or None)
        """
        if not windows:
            raise ValueError('no windows to evaluate')
        scales = (1.0 / len(self.owned_rows(windows)), 1.0 / (len(windows) * self.unroll))
        bounds = np.linspace(0, len(windows), max(1, min(threads, len(windows))) + 1).astype(int)
        chunks = [(windows[low:high], noise[low:high]) for low, high in zip(bounds[:-1], bounds[1:])]

        def run(chunk):
            return self.evaluate_chunk(chunk[0], chunk[1], scales, need_grad)

        if len(chunks) == 1:
            results = [run(chunks[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                results = list(pool.map(run, chunks))
        sums, grads = results[0]
        for chunk_sums, chunk_grads in results[1:]:
            sums = sums + chunk_sums
            if need_grad:
                add_into(grads, chunk_grads)
        return self.components(sums), grads

    def components(self, sums):
        l_r, l_f, l_ham_r, l_ham_f = (float(value) for value in sums)
        l_rom = l_r + l_f
        l_ham = l_ham_r + l_ham_f
        return {
            'L_r': l_r, 'L_f': l_f, 'L_rom': l_rom,
            'L_ham_r': l_ham_r, 'L_ham_f': l_ham_f, 'L_ham': l_ham,
            'L_total': loss_total(l_rom, l_ham, *self.weights),
        }

    def evaluate_chunk(self, windows, noise, scales, need_grad):
        grads = [np.zeros_like(param) for param in self.model.parameters()] if need_grad else None
        rows = self.owned_rows(windows)
        owners = np.array([trajectory for trajectory, _ in rows])
        states = np.array([self.trajectories[trajectory, index] for trajectory, index in rows])
        recon = self.reconstruction(states, owners, scales[0], grads)
        window_states = np.array([self.trajectories[trajectory, start:start + self.unroll + 1]
                                  for trajectory, start in windows])
        window_owners = np.array([trajectory for trajectory, _ in windows])
        forecast = self.forecast(window_states, noise, window_owners, scales[1], grads)
        return np.array([recon[0], forecast[0], recon[1], forecast[1]]), grads

    def residual_cotangent(self, predicted, target, owners, scale, with_gradient):
        """
        Squared error and squared energy deviation of predicted states, with the cotangent on them
        """
        diff = predicted - target
        error = scale * np.sum(diff * diff)
        deviation_sum = 0.0
        cotangent = 2.0 * scale * self.weights[0] * diff if with_gradient else None
        if self.systems is not None:
            values, gradients = energies(self.systems, owners, predicted, with_gradient)
            deviation = values - self.anchors[owners]
            deviation_sum = scale * np.sum(deviation * deviation)
            if with_gradient:
                cotangent += 2.0 * scale * self.weights[1] * deviation[:, np.newaxis] * gradients
        return error, deviation_sum, cotangent

    def reconstruction(self, states, owners, scale, grads):
        embedding = self.model.embedding
        latent = embedding.project(states)
        rebuilt = embedding.lift(latent)
        error, deviation, cotangent = self.residual_cotangent(rebuilt, states, owners, scale, grads is not None)
        if grads is not None:
            latent_cotangent, lift_grads = embedding.run_pullback('lift', latent, cotangent)
            _, project_grads = embedding.run_pullback('project', states, latent_cotangent)
            self.accumulate(grads, add_into(lift_grads, project_grads), [])
        return error, deviation

    def forecast(self, windows, noise, owners, scale, grads):
        model = self.model
        x = windows[:, 0] + noise
        tape = []
        error = deviation = 0.0
        cotangents = []
        for j in range(1, self.unroll + 1):
            y = model.encode(x)
            z = model.flow_step(y)
            x_next = model.decode(z)
            tape.append((x, y, z))
            step_error, step_deviation, cotangent = self.residual_cotangent(
                x_next, windows[:, j], owners, scale, grads is not None)
            error += step_error
            deviation += step_deviation
            cotangents.append(cotangent)
            x = x_next
        if grads is None:
            return error, deviation
        carried = np.zeros_like(x)
        embedding = model.embedding
        for (x, y, z), cotangent in reversed(list(zip(tape, cotangents))):
            z_cotangent, lift_grads = embedding.run_pullback('lift', z, carried + cotangent)
            y_cotangent, flow_grads = model.flow.pullback(y, z_cotangent)
            carried, project_grads = embedding.run_pullback('project', x, y_cotangent)
            self.accumulate(grads, add_into(lift_grads, project_grads), flow_grads)
        return error, deviation

    def accumulate(self, grads, embedding_grads, flow_grads):
        count = len(embedding_grads)
        add_into(grads[:count], embedding_grads)
        if flow_grads:
            add_into(grads[count:], flow_grads)


def check_weights(weights):
    lambda1, lambda2 = (float(weight) for weight in weights)
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError('loss weights must be non-negative, got (%g, %g)' % (lambda1, lambda2))
    return lambda1, lambda2


def loss_total(l_rom, l_ham, lambda1=1.0, lambda2=0.01):
    lambda1, lambda2 = check_weights((lambda1, lambda2))
    return lambda1 * l_rom + lambda2 * l_ham


def loss_recon(model, snapshots):
    """
    Mean squared reconstruction error |x - decode(encode(x))|^2 over snapshots
    """
    return evaluate_mse(model, snapshots)


def loss_components(model, trajectories, unroll, systems=None, noise_sigma=0.0, rng=None, weights=(1.0, 0.0)):
    objective = LossObjective(model, trajectories, unroll, weights, systems)
    windows = objective.windows()
    noise = draw_noise(rng, noise_sigma, (len(windows), 2 * model.n))
    components, _ = objective.evaluate(windows, noise, need_grad=False)
    return components


def loss_rom_multistep(model, trajectories, unroll, noise_sigma=0.0, rng=None):
    return loss_components(model, trajectories, unroll, None, noise_sigma, rng)['L_rom']


def loss_ham_multistep(model, trajectories, unroll, systems, noise_sigma=0.0, rng=None):
    if systems is None:
        raise ValueError('the Hamiltonian loss needs the generating system')
    return loss_components(model, trajectories, unroll, systems, noise_sigma, rng)['L_ham']


def loss_gradient(model, trajectories, unroll, systems=None, weights=(1.0, 0.01), noise_sigma=0.0, rng=None,
                  threads=1):
    """
    Total loss components and its gradient with respect to model.parameters()
    """
    objective = LossObjective(model, trajectories, unroll, weights, systems)
    windows = objective.windows()
    noise = draw_noise(rng, noise_sigma, (len(windows), 2 * model.n))
    return objective.evaluate(windows, noise, need_grad=True, threads=threads)


# training


@dataclass
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 0.01
    unroll: int = 3
    noise_sigma: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    decay: float = 0.99
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        check_weights((self.lambda1, self.lambda2))
        if self.unroll < 1:
            raise ValueError('unroll steps must be at least 1')
        if self.noise_sigma < 0:
            raise ValueError('noise level must be non-negative')
        if self.epochs < 0 or self.batch_size < 1 or self.threads < 1:
            raise ValueError('epochs must be non-negative, batch size and threads positive')
        if not self.lr > 0 or not 0 < self.decay <= 1:
            raise ValueError('learning rate must be positive and decay in (0, 1]')

    def as_dict(self):
        return asdict(self)


class LossReport:
    """
    Per-epoch loss decomposition; L_total is always recomputed from L_rom and L_ham
    """

    def __init__(self, lambda1=1.0, lambda2=0.01):
        self.weights = check_weights((lambda1, lambda2))
        self.records = []

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        yield from self.records

    @property
    def last(self):
        return self.records[-1] if self.records else None

    def append(self, epoch, l_r, l_f, l_ham, seconds=0.0):
        l_rom = l_r + l_f
        record = {
            'epoch': epoch, 'L_r': l_r, 'L_f': l_f, 'L_rom': l_rom, 'L_ham': l_ham,
            'L_total': loss_total(l_rom, l_ham, *self.weights), 'seconds': seconds,
        }
        self.records.append(record)
        return record

    def write_csv(self, path):
        with open(path, 'w', newline='') as csv_file:
            writer = csv.writer(csv_file, lineterminator='\n')
            writer.writerow(loss_columns)
            for record in self.records:
                writer.writerow([record['epoch']] + ['%.17g' % record[column] for column in loss_columns[1:]])


def trajectory_systems(dataset):
    if dataset.spec.kind == 'wave':
        return [dataset.system(0)] * dataset.n_traj
    return [dataset.system(index) for index in range(dataset.n_traj)]


def train(model, dataset, config, systems=None):
    """
    Mini-batch Adam over shuffled trajectory windows
    :param systems: per-trajectory systems for the Hamiltonian penalty; derived from the dataset when omitted
    :return: (model, LossReport)
    :raises DivergenceError: on a non-finite loss, after restoring the last-good parameters
    """
    if dataset.spec.n != model.n:
        raise ConfigError('dataset has N=%d but the model expects n=%d' % (dataset.spec.n, model.n))
    if dataset.n_steps < config.unroll:
        raise ConfigError('trajectories of %d steps cannot be unrolled %d steps' % (dataset.n_steps, config.unroll))
    systems = systems if systems is not None else trajectory_systems(dataset)
    objective = LossObjective(model, dataset.states, config.unroll, (config.lambda1, config.lambda2), systems)
    windows = objective.windows()
    shuffle_rng = RngStream(config.seed, (1,))
    noise_rng = RngStream(config.seed, (2,))
    params = model.parameters()
    state = AdamState.create(params, lr=config.lr, decay=config.decay)
    report = LossReport(config.lambda1, config.lambda2)
    last_good = model.get_vector()
    logger.info('Training %r on %d windows for %d epochs' % (model, len(windows), config.epochs))
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(windows))
        totals = np.zeros(3)
        batches = 0
        for low in range(0, len(order), config.batch_size):
            batch = [windows[index] for index in order[low:low + config.batch_size]]
            noise = draw_noise(noise_rng, config.noise_sigma, (len(batch), 2 * model.n))
            components, grads = objective.evaluate(batch, noise, threads=config.threads)
            values = np.array([components['L_r'], components['L_f'], components['L_ham']])
            if not np.all(np.isfinite(values)) or not np.all(np.isfinite(pack(grads))):
                model.set_vector(last_good)
                logger.error('Non-finite loss in epoch %d, restored last-good parameters' % epoch)
                raise DivergenceError(epoch, model=model, report=report)
            logger.debug('epoch %d batch %d: %s' % (epoch, batches, components))
            adam_step(state, params, grads)
            totals += values
            batches += 1
        end_epoch(state)
        totals /= batches
        record = report.append(epoch, totals[0], totals[1], totals[2], time.perf_counter() - started)
        if not np.isfinite(model.get_vector()).all():
            model.set_vector(last_good)
            raise DivergenceError(epoch, model=model, report=report)
        last_good = model.get_vector()
        logger.info('epoch %(epoch)d: L_r=%(L_r).4e L_f=%(L_f).4e L_ham=%(L_ham).4e L_total=%(L_total).4e' % record)
    return model, report


def symplecticity_audit(model, rng, points=100, powers=(1, 5), scale=1.0):
    """
    Analytic symplecticity defects of the flow and of y -> decode(flow^j(y)) at random latent points
    :return: mapping of audited map to its maximum defect
    """
    latent_dim = 2 * model.k
    samples = rng.uniform(-scale, scale, (points, latent_dim))
    flow_defect = max(symplecticity_defect(model.flow_step, y, jacobian=model.flow.jacobian) for y in samples)
    result = {'flow': flow_defect}
    for power in powers:
        def jacobian(y, power=power):
            derivative = np.eye(latent_dim)
            for _ in range(power):
                derivative = model.flow.jacobian(y) @ derivative
                y = model.flow_step(y)
            return model.embedding.run_jacobian('lift', y) @ derivative

        result['decoder_flow%d' % power] = max(symplecticity_defect(None, y, jacobian=jacobian) for y in samples)
    return result


# baseline and metrics


class CotangentLift:
    """
    Linear symplectic embedding A = blockdiag(Phi, Phi) with orthonormal Phi
    """
    variant = 'cotangent'

    def __init__(self, phi):
        self.phi = np.asarray(phi, dtype=np.float64)
        self.n, self.k = self.phi.shape

    def __repr__(self):
        return '<CotangentLift R^%d -> R^%d>' % (2 * self.k, 2 * self.n)

    def matrix(self):
        return scipy.linalg.block_diag(self.phi, self.phi)

    def encode(self, x):
        x, single = as_batch(x)
        check_dimension(x, 2 * self.n)
        return from_batch(np.concatenate([x[:, :self.n] @ self.phi, x[:, self.n:] @ self.phi], axis=1), single)

    def decode(self, y):
        y, single = as_batch(y)
        check_dimension(y, 2 * self.k, 'latent state')
        return from_batch(np.concatenate([y[:, :self.k] @ self.phi.T, y[:, self.k:] @ self.phi.T], axis=1), single)


def fit_cotangent_lift(snapshots, k, rtol=1e-12):
    """
    Phi = leading k left singular vectors of the n x 2S block [Q P]
    """
    snapshots = np.asarray(snapshots, dtype=np.float64)
    snapshots = snapshots.reshape(-1, snapshots.shape[-1])
    n = snapshots.shape[1] // 2
    if not 1 <= k <= n:
        raise ValueError('latent half dimension %d must lie in [1, %d]' % (k, n))
    if len(snapshots) < k:
        raise ValueError('%d snapshots cannot span %d modes' % (len(snapshots), k))
    block = np.concatenate([snapshots[:, :n].T, snapshots[:, n:].T], axis=1)
    left, singular_values, _ = scipy.linalg.svd(block, full_matrices=False)
    if singular_values[k - 1] <= rtol * singular_values[0]:
        raise ValueError('snapshot block has rank below %d' % k)
    logger.debug('cotangent lift keeps %.6g of the snapshot energy' % (
        np.sum(singular_values[:k] ** 2) / np.sum(singular_values ** 2)))
    return CotangentLift(left[:, :k])


def evaluate_mse(model, trajectories):
    """
    Mean over all snapshots of |x - decode(encode(x))|^2; works for any encoder/decoder pair
    """
    snapshots = np.asarray(trajectories, dtype=np.float64)
    if snapshots.size == 0:
        raise ValueError('no snapshots to evaluate')
    snapshots = snapshots.reshape(-1, snapshots.shape[-1])
    rebuilt = model.decode(model.encode(snapshots))
    return float(np.mean(np.sum((rebuilt - snapshots) ** 2, axis=1)))


def hamiltonian_trace(model, x0, steps, system, dt=1.0, reference=None, space='latent'):
    """
    Discrete Hamiltonian along a model rollout
    :param reference: optional reference states, at least steps + 1 rows
    :return: array with columns t, H, H - H0, (H - H0)/|H0|, H_ref, |x - x_ref| (NaN without a reference)
    """
    x0 = np.asarray(x0, dtype=np.float64)
    states = x0[np.newaxis] if steps == 0 else rollout(model, x0, steps, space)
    values = system.hamiltonian(states)
    deviation = values - values[0]
    scale = abs(values[0])
    trace = np.full((steps + 1, len(trace_columns)), np.nan)
    trace[:, 0] = dt * np.arange(steps + 1)
    trace[:, 1] = values
    trace[:, 2] = deviation
    trace[:, 3] = deviation / scale if scale else 0.0
    if reference is not None:
        reference = np.asarray(reference, dtype=np.float64)
        if len(reference) < steps + 1:
            raise ValueError('reference has %d states, trace needs %d' % (len(reference), steps + 1))
        trace[:, 4] = system.hamiltonian(reference[:steps + 1])
        trace[:, 5] = np.linalg.norm(states - reference[:steps + 1], axis=1)
    return trace
