"""
Full-order Hamiltonian systems, the Störmer–Verlet integrator and snapshot data generation.

Every system evolves as dz/dt = J grad H(z) with its grid-weighted discrete Hamiltonian, so the
discrete wave systems transport profiles with speed sqrt(stiffness) * dx.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from . import __version__
from .storage import read_arrays, write_arrays
from .util import ConfigError, GenerationError, IntegrationError, as_batch, check_dimension, from_batch, logger

__all__ = (
    'SystemSpec', 'SamplingSpec', 'SnapshotDataset', 'DxxOperator',
    'WaveSystem', 'NLSSystem', 'HarmonicOscillator',
    'spline_h', 'kappa', 'make_system', 'initial_state', 'wave_initial_state', 'param_wave_initial_state',
    'nls_initial_state', 'exact_wave_solution', 'hamiltonian', 'grad_hamiltonian',
    'stormer_verlet_step', 'newton_solve', 'integrate', 'generate_dataset',
)

kinds = ('wave', 'param-wave', 'nls')
parameter_names = {
    'wave': ('a0', 'x0'),
    'param-wave': ('omega1', 'omega2', 'omega3', 'omega4'),
    'nls': ('epsilon',),
}
documented_ranges = {
    'wave': ((7.0, 9.0), (-0.2, 0.2)),
    'param-wave': ((0.0, 1.0),) * 4,
    'nls': ((0.9, 1.1),),
}


def spline_h(s):
    """
    Compactly supported cubic spline profile: 1 at s = 0, vanishing for s >= 2
    """
    s = np.asarray(s, dtype=np.float64)
    value = np.where(
        s <= 1.0,
        1.0 - 1.5 * s ** 2 + 0.75 * s ** 3,
        np.where(s <= 2.0, 0.25 * (2.0 - s) ** 3, 0.0),
    )
    return float(value) if value.ndim == 0 else value


def kappa(omega, c2):
    """
    Parametric wave stiffness c^2 * sum_l omega_l / l^2 over the four modes
    """
    omega = np.asarray(omega, dtype=np.float64).reshape(-1)
    if omega.size != 4:
        raise ValueError('kappa takes 4 parameters, got %d' % omega.size)
    return float(c2 * np.sum(omega / np.arange(1, 5) ** 2))


def warn_out_of_range(kind, params):
    for name, value, (low, high) in zip(parameter_names[kind], params, documented_ranges[kind]):
        if not low <= value <= high:
            logger.warning('%s parameter %s=%g lies outside [%g, %g]' % (kind, name, value, low, high))


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    n: int
    dt: float
    omega2: float = 0.01
    c2: float = 0.1
    speed: float = 1.0
    scale: float = 0.11

    def __post_init__(self):
        if self.kind not in kinds:
            raise ValueError('unknown system kind %s' % self.kind)
        if self.n < 3:
            raise ValueError('at least 3 grid points are needed, got %d' % self.n)
        if not self.dt > 0:
            raise ValueError('time step must be positive')
        if self.omega2 < 0 or self.c2 < 0 or self.scale <= 0:
            raise ValueError('wave stiffness must be non-negative and the domain scale positive')

    @property
    def boundary(self):
        return 'periodic' if self.kind == 'nls' else 'dirichlet'

    @property
    def length(self):
        return 2.0 * np.pi / self.scale if self.kind == 'nls' else 1.0

    @property
    def dx(self):
        return self.length / self.n

    @property
    def parameter_names(self):
        return parameter_names[self.kind]

    def grid(self):
        if self.kind == 'nls':
            return self.dx * np.arange(self.n)
        return self.dx * np.arange(1, self.n + 1)

    def as_dict(self):
        return asdict(self)


class DxxOperator:
    """
    Symmetric second-difference operator with Dirichlet (ghost zeros) or periodic closure
    """

    def __init__(self, n, dx, boundary='dirichlet'):
        if boundary not in ('dirichlet', 'periodic'):
            raise ValueError('unknown boundary %s' % boundary)
        self.n = n
        self.dx = dx
        self.boundary = boundary
        off_diagonal = np.ones(n - 1)
        matrix = scipy.sparse.diags([off_diagonal, -2.0 * np.ones(n), off_diagonal], [-1, 0, 1], format='lil')
        if boundary == 'periodic':
            matrix[0, n - 1] = 1.0
            matrix[n - 1, 0] = 1.0
        self.matrix = matrix.tocsr() / dx ** 2

    def __repr__(self):
        return '<DxxOperator %d %s>' % (self.n, self.boundary)

    def apply(self, v):
        v, single = as_batch(v)
        check_dimension(v, self.n, 'grid function')
        return from_batch(np.asarray(self.matrix @ v.T).T, single)

    def toarray(self):
        return self.matrix.toarray()


class HamiltonianSystem:
    """
    Base for canonical systems on R^{2n}; z = (q, p)
    """
    separable = True
    n = 0

    def split(self, z):
        z, single = as_batch(z)
        check_dimension(z, 2 * self.n)
        return z[:, :self.n], z[:, self.n:], single

    def hamiltonian(self, z):
        raise NotImplementedError

    def grad_q(self, q, p):
        raise NotImplementedError

    def grad_p(self, q, p):
        raise NotImplementedError

    def d_grad_q_dp(self, q, p):
        return np.zeros((self.n, self.n))

    def d_grad_p_dq(self, q, p):
        return np.zeros((self.n, self.n))

    def gradient(self, z):
        q, p, single = self.split(z)
        return from_batch(np.concatenate([self.grad_q(q, p), self.grad_p(q, p)], axis=1), single)

    def vector_field(self, z):
        q, p, single = self.split(z)
        return from_batch(np.concatenate([self.grad_p(q, p), -self.grad_q(q, p)], axis=1), single)


class HarmonicOscillator(HamiltonianSystem):
    """
    H = (|q|^2 + |p|^2) / 2
    """

    def __init__(self, n=1):
        self.n = n

    def __repr__(self):
        return '<HarmonicOscillator %d>' % self.n

    def hamiltonian(self, z):
        q, p, single = self.split(z)
        return from_batch(0.5 * (np.sum(q * q, axis=1) + np.sum(p * p, axis=1)), single)

    def grad_q(self, q, p):
        return np.array(q, dtype=np.float64)

    def grad_p(self, q, p):
        return np.array(p, dtype=np.float64)


class WaveSystem(HamiltonianSystem):
    """
    Discrete linear wave: H = dx/2 sum p^2 + stiffness/(2 dx) sum over all N+1 edges of (q_{j+1} - q_j)^2,
    with q_0 = q_{N+1} = 0
    """

    def __init__(self, n, dx, stiffness):
        self.n = n
        self.dx = dx
        self.stiffness = stiffness
        self.dxx = DxxOperator(n, dx, 'dirichlet')

    def __repr__(self):
        return '<WaveSystem %d stiffness=%g>' % (self.n, self.stiffness)

    @property
    def wave_speed(self):
        return np.sqrt(self.stiffness) * self.dx

    def hamiltonian(self, z):
        q, p, single = self.split(z)
        edges = np.diff(np.pad(q, ((0, 0), (1, 1))), axis=1)
        kinetic = 0.5 * self.dx * np.sum(p * p, axis=1)
        potential = 0.5 * self.stiffness / self.dx * np.sum(edges * edges, axis=1)
        return from_batch(kinetic + potential, single)

    def grad_q(self, q, p):
        return -self.stiffness * self.dx * self.dxx.apply(q)

    def grad_p(self, q, p):
        return self.dx * np.asarray(p, dtype=np.float64)


class NLSSystem(HamiltonianSystem):
    """
    Periodic cubic NLS in canonical form u = p + i q:
    H = dx sum [ -((q_i - q_{i-1})^2 + (p_i - p_{i-1})^2) / (2 dx^2) + epsilon/4 (q_i^2 + p_i^2)^2 ]
    """
    separable = False

    def __init__(self, n, dx, epsilon):
        self.n = n
        self.dx = dx
        self.epsilon = epsilon
        self.dxx = DxxOperator(n, dx, 'periodic')

    def __repr__(self):
        return '<NLSSystem %d epsilon=%g>' % (self.n, self.epsilon)

    def hamiltonian(self, z):
        q, p, single = self.split(z)
        dq = q - np.roll(q, 1, axis=1)
        dp = p - np.roll(p, 1, axis=1)
        density = q * q + p * p
        kinetic = -0.5 * np.sum(dq * dq + dp * dp, axis=1) / self.dx ** 2
        quartic = 0.25 * self.epsilon * np.sum(density * density, axis=1)
        return from_batch(self.dx * (kinetic + quartic), single)

    def grad_q(self, q, p):
        return self.dx * (self.dxx.apply(q) + self.epsilon * (q * q + p * p) * q)

    def grad_p(self, q, p):
        return self.dx * (self.dxx.apply(p) + self.epsilon * (q * q + p * p) * p)

    def d_grad_q_dp(self, q, p):
        return np.diag(2.0 * self.dx * self.epsilon * p * q)

    def d_grad_p_dq(self, q, p):
        return np.diag(2.0 * self.dx * self.epsilon * q * p)


def make_system(spec, params):
    """
    The full-order system for one parameter vector
    """
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    if params.size != len(spec.parameter_names):
        raise ValueError('%s expects parameters %s, got %d values' % (spec.kind, spec.parameter_names, params.size))
    if spec.kind == 'wave':
        return WaveSystem(spec.n, spec.dx, spec.omega2)
    if spec.kind == 'param-wave':
        return WaveSystem(spec.n, spec.dx, kappa(params, spec.c2))
    return NLSSystem(spec.n, spec.dx, params[0])


def hamiltonian(system, z):
    return system.hamiltonian(z)


def grad_hamiltonian(system, z):
    return system.gradient(z)


# initial conditions


def central_difference(q, dx):
    padded = np.pad(q, 1)
    return (padded[2:] - padded[:-2]) / (2.0 * dx)


def wave_initial_state(spec, a0, x0):
    """
    Right-travelling spline pulse centred at 1/2 + x0 with width 2/a0
    """
    warn_out_of_range('wave', (a0, x0))
    q = spline_h(a0 * np.abs(spec.grid() - 0.5 - x0))
    p = -np.sqrt(spec.omega2) * central_difference(q, spec.dx)
    return np.concatenate([q, p])


def param_wave_initial_state(spec, omega):
    warn_out_of_range('param-wave', omega)
    q = spline_h(10.0 * np.abs(spec.grid() - 0.5))
    p = -np.sqrt(kappa(omega, spec.c2)) * central_difference(q, spec.dx)
    return np.concatenate([q, p])


def nls_initial_state(spec):
    """
    Soliton sqrt(2) sech(x - x0) exp(i c (x - x0) / 2) centred at x0 = L/2; p = Re u, q = Im u
    """
    if spec.boundary != 'periodic':
        raise ValueError('the soliton needs a periodic grid')
    shifted = spec.grid() - 0.5 * spec.length
    u = np.sqrt(2.0) / np.cosh(shifted) * np.exp(0.5j * spec.speed * shifted)
    return np.concatenate([u.imag, u.real])


def initial_state(spec, params):
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    if spec.kind == 'wave':
        return wave_initial_state(spec, params[0], params[1])
    if spec.kind == 'param-wave':
        return param_wave_initial_state(spec, params)
    warn_out_of_range('nls', params)
    return nls_initial_state(spec)


def exact_wave_solution(spec, a0, x0, t):
    """
    Displacement u0(x - c t) of the discrete wave, valid before the pulse reaches the boundary
    """
    if spec.kind != 'wave':
        raise ValueError('the exact solution is only known for the wave system')
    speed = np.sqrt(spec.omega2) * spec.dx
    return spline_h(a0 * np.abs(spec.grid() - speed * t - 0.5 - x0))


# integration


def newton_solve(residual, jacobian, start, tol=1e-12, max_iter=50, diagnostics=None):
    """
    Newton iteration with dense solves, stopping once the residual inf-norm is below tol
    :param diagnostics: optional list receiving each solve's residual history
    """
    x = np.array(start, dtype=np.float64)
    history = []
    for iteration in range(max_iter + 1):
        r = residual(x)
        norm = float(np.max(np.abs(r)))
        history.append(norm)
        if not np.isfinite(norm):
            raise IntegrationError('Newton residual became non-finite', history)
        if norm < tol:
            break
        if iteration == max_iter:
            raise IntegrationError('Newton did not converge in %d iterations (residual %g)' % (max_iter, norm),
                                   history)
        x -= scipy.linalg.solve(jacobian(x), r)
    logger.debug('Newton converged in %d iterations: %s' % (len(history) - 1, history))
    if len(history) > 11:
        logger.warning('Newton needed %d iterations' % (len(history) - 1))
    if diagnostics is not None:
        diagnostics.append(history)
    return x


def stormer_verlet_step(system, q, p, dt, tol=1e-12, max_iter=50, diagnostics=None):
    """
    One Störmer–Verlet step; explicit for separable systems, Newton-resolved stages otherwise
    :return: (q', p')
    """
    q = np.array(q, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    if q.shape != (system.n,) or p.shape != (system.n,):
        raise ValueError('state halves must have shape (%d,)' % system.n)
    if dt == 0:
        return q, p
    half = 0.5 * dt
    if system.separable:
        p_half = p - half * system.grad_q(q, p)
        q_new = q + dt * system.grad_p(q, p_half)
        return q_new, p_half - half * system.grad_q(q_new, p_half)

    identity = np.eye(system.n)

    def momentum_residual(x):
        return x - p + half * system.grad_q(q, x)

    def momentum_jacobian(x):
        return identity + half * system.d_grad_q_dp(q, x)

    p_half = newton_solve(momentum_residual, momentum_jacobian, p - half * system.grad_q(q, p),
                          tol, max_iter, diagnostics)
    explicit = q + half * system.grad_p(q, p_half)

    def position_residual(x):
        return x - explicit - half * system.grad_p(x, p_half)

    def position_jacobian(x):
        return identity - half * system.d_grad_p_dq(x, p_half)

    q_new = newton_solve(position_residual, position_jacobian, explicit + half * system.grad_p(q, p_half),
                         tol, max_iter, diagnostics)
    return q_new, p_half - half * system.grad_q(q_new, p_half)


def integrate(system, z0, dt, steps, **kwargs):
    """
    :return: array of shape (steps + 1, 2n) starting with z0
    """
    z0 = np.asarray(z0, dtype=np.float64)
    states = np.empty((steps + 1, 2 * system.n))
    states[0] = z0
    q, p = z0[:system.n], z0[system.n:]
    for step in range(1, steps + 1):
        q, p = stormer_verlet_step(system, q, p, dt, **kwargs)
        states[step, :system.n] = q
        states[step, system.n:] = p
        if not np.all(np.isfinite(states[step])):
            raise IntegrationError('non-finite state at step %d' % step)
    return states


# sampling and datasets


@dataclass(frozen=True)
class SamplingSpec:
    method: str = 'uniform'
    count: int = 10
    points_per_axis: int = 2
    ranges: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.method not in ('uniform', 'grid'):
            raise ValueError('unknown sampling method %s' % self.method)
        if self.count < 1 or self.points_per_axis < 1:
            raise ValueError('sample counts must be positive')
        for low, high in self.ranges:
            if low > high:
                raise ValueError('empty sampling range [%g, %g]' % (low, high))

    def draw(self, rng):
        """
        :return: array of shape (trajectories, parameters)
        """
        if not self.ranges:
            raise ValueError('no parameter ranges to sample')
        lows = np.array([low for low, _ in self.ranges])
        highs = np.array([high for _, high in self.ranges])
        if self.method == 'uniform':
            return lows + (highs - lows) * rng.uniform(0.0, 1.0, (self.count, len(self.ranges)))
        axes = [np.linspace(low, high, self.points_per_axis) for low, high in self.ranges]
        return np.array(list(itertools.product(*axes)))


class SnapshotDataset:
    """
    Trajectories x snapshots x 2N states sharing one system spec and time grid
    """
    kind = 'snapshot-dataset'

    def __init__(self, states, params, spec, seed=None, generator=None):
        self.states = np.asarray(states, dtype=np.float64)
        self.params = np.asarray(params, dtype=np.float64).reshape(self.states.shape[0], -1)
        self.spec = spec
        self.seed = seed
        self.generator = generator or 'symplectic-rom %s' % __version__
        if self.states.ndim != 3 or self.states.shape[2] != 2 * spec.n:
            raise ValueError('states must have shape (trajectories, snapshots, %d)' % (2 * spec.n))

    def __repr__(self):
        return '<SnapshotDataset %s %d trajectories x %d steps>' % (self.spec.kind, self.n_traj, self.n_steps)

    def __len__(self):
        return self.n_traj

    @property
    def n_traj(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return self.states.shape[1] - 1

    @property
    def times(self):
        return self.spec.dt * np.arange(self.n_steps + 1)

    def snapshots(self):
        return self.states.reshape(-1, self.states.shape[2])

    def system(self, index):
        return make_system(self.spec, self.params[index])

    def energy_drift(self):
        """
        Per-trajectory max |H - H0| / |H0| (absolute when H0 = 0)
        """
        drifts = []
        for index in range(self.n_traj):
            energies = self.system(index).hamiltonian(self.states[index])
            scale = abs(energies[0]) or 1.0
            drifts.append(float(np.max(np.abs(energies - energies[0])) / scale))
        return np.array(drifts)

    def reference(self, index, steps, **kwargs):
        """
        Reference trajectory of steps + 1 states, integrated onward from the last stored state when needed
        """
        stored = self.states[index, :steps + 1]
        if steps <= self.n_steps:
            return stored
        logger.info('Extending trajectory %d from %d to %d steps' % (index, self.n_steps, steps))
        extension = integrate(self.system(index), stored[-1], self.spec.dt, steps - self.n_steps, **kwargs)
        return np.concatenate([stored, extension[1:]])

    def subset(self, indices):
        return SnapshotDataset(self.states[indices], self.params[indices], self.spec, self.seed, self.generator)

    def metadata(self):
        return {
            'kind': self.spec.kind,
            'N': self.spec.n,
            'dt': self.spec.dt,
            'dx_or_L': self.spec.length if self.spec.kind == 'nls' else self.spec.dx,
            'boundary': self.spec.boundary,
            'n_traj': self.n_traj,
            'n_steps': self.n_steps,
            'params': self.params.tolist(),
            'parameter_names': list(self.spec.parameter_names),
            'seed': self.seed,
            'generator': self.generator,
            'system': self.spec.as_dict(),
            'container': self.kind,
        }

    def save(self, path):
        write_arrays(path, [('states', self.states)], self.metadata())

    @classmethod
    def load(cls, path):
        metadata, arrays = read_arrays(path)
        if metadata.get('container') != cls.kind:
            raise ConfigError('%s is not a snapshot dataset' % path)
        try:
            spec = SystemSpec(**metadata['system'])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError('%s has an invalid system description: %s' % (path, e))
        _, states = arrays[0]
        return cls(states, metadata['params'], spec, metadata.get('seed'), metadata.get('generator'))


def generate_dataset(spec, sampling, horizon, rng, threads=1, **kwargs):
    """
    Samples parameters and integrates one trajectory per sample over [0, horizon]
    :param spec: SystemSpec
    :param sampling: SamplingSpec whose ranges match the system's parameters
    :param horizon: final time; rounded to a whole number of steps
    :param rng: RngStream
    :param threads: worker threads integrating trajectories
    """
    steps = int(round(horizon / spec.dt))
    if steps < 1:
        raise ValueError('horizon %g is shorter than one time step' % horizon)
    if len(sampling.ranges) != len(spec.parameter_names):
        raise ValueError('%s needs ranges for %s' % (spec.kind, ', '.join(spec.parameter_names)))
    params = sampling.draw(rng)
    logger.info('Integrating %d %s trajectories over %d steps' % (len(params), spec.kind, steps))

    def run(index):
        try:
            system = make_system(spec, params[index])
            return integrate(system, initial_state(spec, params[index]), spec.dt, steps, **kwargs), None
        except (IntegrationError, ArithmeticError, ValueError, scipy.linalg.LinAlgError) as e:
            return None, str(e)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run, range(len(params))))
    failures = [(index, reason) for index, (_, reason) in enumerate(results) if reason is not None]
    if failures:
        raise GenerationError(failures)
    return SnapshotDataset(np.stack([states for states, _ in results]), params, spec, seed=rng.seed)
