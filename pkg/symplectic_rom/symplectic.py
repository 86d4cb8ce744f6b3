"""
Structure-preserving maps: Hénon maps, layers and nets, G-reflector stacks, the canonical
inclusion and truncation, and the composite embedding built from them.

Every map works on single vectors of shape (d,) or batches of shape (batch, d), has an
analytic inverse, an analytic Jacobian and a reverse-mode pullback returning the input
cotangent together with gradients aligned with `parameters()`.
"""
from collections import namedtuple

import numpy as np

from .numcore import PotentialNet, finite_diff_jacobian, poisson_matrix
from .util import as_batch, check_dimension, check_finite, from_batch

__all__ = (
    'HenonMap', 'HenonLayer', 'HenonNet', 'GReflector', 'GReflectorStack', 'Inclusion',
    'CompositeEmbedding', 'map_pullback', 'symplecticity_defect',
)

Stage = namedtuple('Stage', 'forward pullback jacobian owner')


def chain_forward(stages, z):
    for stage in stages:
        z = stage.forward(z)
    return z


def chain_pullback(stages, z, c):
    inputs = []
    for stage in stages:
        inputs.append(z)
        z = stage.forward(z)
    stage_grads = [None] * len(stages)
    for index in reversed(range(len(stages))):
        c, stage_grads[index] = stages[index].pullback(inputs[index], c)
    return c, stage_grads


def chain_jacobian(stages, z):
    z = np.asarray(z, dtype=np.float64)
    jacobian = None
    for stage in stages:
        local = stage.jacobian(z)
        jacobian = local if jacobian is None else local @ jacobian
        z = stage.forward(z)
    if jacobian is None:
        return np.eye(z.shape[-1])
    return jacobian


def swap_halves(z):
    """
    Applies the Poisson matrix: J (q, p) = (p, -q) on the last axis
    """
    half = z.shape[-1] // 2
    return np.concatenate([z[..., half:], -z[..., :half]], axis=-1)


class HenonMap:
    """
    H(V, eta): (x, y) -> (y + eta, x + grad V(y)); anti-symplectic for any V
    """

    def __init__(self, potential, eta):
        self.potential = potential
        self.eta = np.array(eta, dtype=np.float64).reshape(-1)
        if potential.input_dim != self.eta.size:
            raise ValueError('potential acts on R^%d but eta has %d entries' % (potential.input_dim, self.eta.size))

    def __repr__(self):
        return '<HenonMap on R^%d>' % self.dim

    @property
    def half_dim(self):
        return self.eta.size

    @property
    def dim(self):
        return 2 * self.eta.size

    def parameters(self):
        return self.potential.parameters() + [self.eta]

    def _split(self, z):
        z, single = as_batch(z)
        check_dimension(z, self.dim)
        return z[:, :self.half_dim], z[:, self.half_dim:], single

    def apply(self, z):
        x, y, single = self._split(z)
        return from_batch(np.concatenate([y + self.eta, x + self.potential.input_gradient(y)], axis=1), single)

    def inverse(self, z):
        u, v, single = self._split(z)
        s = u - self.eta
        return from_batch(np.concatenate([v - self.potential.input_gradient(s), s], axis=1), single)

    def pullback(self, z, c):
        x, y, single = self._split(z)
        c, _ = as_batch(c)
        c_x, c_y = c[:, :self.half_dim], c[:, self.half_dim:]
        hvp, potential_grads = self.potential.pullbacks(y, c_y)
        c_in = np.concatenate([c_y, c_x + hvp], axis=1)
        return from_batch(c_in, single), potential_grads + [c_x.sum(axis=0)]

    def inverse_pullback(self, z, c):
        u, v, single = self._split(z)
        c, _ = as_batch(c)
        c_x, c_y = c[:, :self.half_dim], c[:, self.half_dim:]
        hvp, potential_grads = self.potential.pullbacks(u - self.eta, c_x)
        s_bar = c_y - hvp
        c_in = np.concatenate([s_bar, c_x], axis=1)
        return from_batch(c_in, single), [-grad for grad in potential_grads] + [-s_bar.sum(axis=0)]

    def jacobian(self, z):
        x, y, _ = self._split(z)
        identity = np.eye(self.half_dim)
        return np.block([
            [np.zeros_like(identity), identity],
            [identity, self.potential.hessian(y[0])],
        ])

    def inverse_jacobian(self, z):
        u, _, _ = self._split(z)
        identity = np.eye(self.half_dim)
        return np.block([
            [-self.potential.hessian(u[0] - self.eta), identity],
            [identity, np.zeros_like(identity)],
        ])


class ChainMap:
    """
    A map assembled from stages; subclasses list their stages and gather stage gradients
    """

    def stages(self, inverse=False):
        raise NotImplementedError

    def gather(self, stage_grads, inverse=False):
        raise NotImplementedError

    def _run(self, z, inverse):
        z, single = as_batch(z)
        check_dimension(z, self.dim)
        return from_batch(chain_forward(self.stages(inverse), z), single)

    def _pullback(self, z, c, inverse):
        z, single = as_batch(z)
        check_dimension(z, self.dim)
        c, _ = as_batch(c)
        check_dimension(c, self.dim, 'cotangent')
        c_in, stage_grads = chain_pullback(self.stages(inverse), z, c)
        return from_batch(c_in, single), self.gather(stage_grads, inverse)

    def apply(self, z):
        return self._run(z, False)

    def inverse(self, z):
        return self._run(z, True)

    def pullback(self, z, c):
        return self._pullback(z, c, False)

    def inverse_pullback(self, z, c):
        return self._pullback(z, c, True)

    def jacobian(self, z):
        return chain_jacobian(self.stages(False), z)

    def inverse_jacobian(self, z):
        return chain_jacobian(self.stages(True), z)


class SequenceMap(ChainMap):
    """
    Composition of child maps in list order; the inverse runs the child inverses in reverse
    """
    children = ()

    @property
    def dim(self):
        return self.children[0].dim

    def parameters(self):
        return [param for child in self.children for param in child.parameters()]

    def stages(self, inverse=False):
        if inverse:
            return [
                Stage(child.inverse, child.inverse_pullback, child.inverse_jacobian, index)
                for index, child in reversed(list(enumerate(self.children)))
            ]
        return [
            Stage(child.apply, child.pullback, child.jacobian, index)
            for index, child in enumerate(self.children)
        ]

    def gather(self, stage_grads, inverse=False):
        if inverse:
            stage_grads = stage_grads[::-1]
        return [grad for grads in stage_grads for grad in grads]


class HenonLayer(ChainMap):
    """
    Fourth power of a single Hénon map; symplectic
    """
    power = 4

    def __init__(self, henon_map):
        self.map = henon_map

    def __repr__(self):
        return '<HenonLayer on R^%d>' % self.dim

    @property
    def dim(self):
        return self.map.dim

    def parameters(self):
        return self.map.parameters()

    def stages(self, inverse=False):
        if inverse:
            stage = Stage(self.map.inverse, self.map.inverse_pullback, self.map.inverse_jacobian, 0)
        else:
            stage = Stage(self.map.apply, self.map.pullback, self.map.jacobian, 0)
        return [stage] * self.power

    def gather(self, stage_grads, inverse=False):
        totals = [np.array(grad) for grad in stage_grads[0]]
        for grads in stage_grads[1:]:
            for total, grad in zip(totals, grads):
                total += grad
        return totals


class HenonNet(SequenceMap):
    """
    Composition of Hénon layers, each with its own potential MLP and shift
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ValueError('a HenonNet needs at least one layer')
        dims = {layer.dim for layer in layers}
        if len(dims) != 1:
            raise ValueError('Hénon layers act on different dimensions: %s' % sorted(dims))
        self.layers = layers

    def __repr__(self):
        return '<HenonNet %d layers on R^%d>' % (len(self.layers), self.dim)

    @property
    def children(self):
        return self.layers

    @classmethod
    def initialize(cls, half_dim, hidden_widths, layers, rng, identity=True):
        """
        Builds a HenonNet on R^{2 half_dim}
        :param half_dim: dimension m of each potential's input
        :param hidden_widths: hidden layer widths of every potential MLP
        :param layers: number of Hénon layers
        :param rng: RngStream
        :param identity: zero the output layers and shifts so the net starts as the identity map
        """
        widths = [half_dim] + list(hidden_widths) + [1]
        henon_layers = []
        for _ in range(layers):
            potential = PotentialNet.initialize(widths, rng, zero_output=identity)
            if identity:
                eta = np.zeros(half_dim)
            else:
                bound = 1.0 / np.sqrt(half_dim)
                eta = rng.uniform(-bound, bound, half_dim)
            henon_layers.append(HenonLayer(HenonMap(potential, eta)))
        return cls(henon_layers)

    def describe(self):
        return {
            'dim': self.dim,
            'layers': len(self.layers),
            'widths': self.layers[0].map.potential.widths[1:-1],
        }

    @classmethod
    def from_description(cls, description):
        half_dim = description['dim'] // 2
        widths = [half_dim] + list(description['widths']) + [1]
        return cls([
            HenonLayer(HenonMap(PotentialNet(widths), np.zeros(half_dim)))
            for _ in range(description['layers'])
        ])


class GReflector:
    """
    Linear symplectic map G = I + beta u u^T J
    """

    def __init__(self, u, beta=0.0):
        self.u = np.array(u, dtype=np.float64).reshape(-1)
        if self.u.size % 2:
            raise ValueError('reflector vector must have even length')
        self.beta = np.array([beta], dtype=np.float64).reshape(1)

    def __repr__(self):
        return '<GReflector on R^%d beta=%g>' % (self.dim, self.beta[0])

    @property
    def dim(self):
        return self.u.size

    def parameters(self):
        return [self.u, self.beta]

    def _reflect(self, z, sign):
        z, single = as_batch(z)
        check_dimension(z, self.dim)
        a = swap_halves(z) @ self.u
        return from_batch(z + sign * self.beta[0] * a[:, np.newaxis] * self.u, single)

    def _reflect_pullback(self, z, c, sign):
        z, single = as_batch(z)
        check_dimension(z, self.dim)
        c, _ = as_batch(c)
        jz = swap_halves(z)
        a = jz @ self.u
        cu = c @ self.u
        beta = sign * self.beta[0]
        # a = u^T J z, so da/dz = J^T u = -J u
        c_in = c - beta * cu[:, np.newaxis] * swap_halves(self.u)
        u_grad = beta * (cu @ jz + a @ c)
        beta_grad = np.array([sign * np.sum(a * cu)])
        return from_batch(c_in, single), [u_grad, beta_grad]

    def matrix(self, sign=1.0):
        return np.eye(self.dim) + sign * self.beta[0] * np.outer(self.u, self.u) @ poisson_matrix(self.dim // 2)

    def apply(self, z):
        return self._reflect(z, 1.0)

    def inverse(self, z):
        return self._reflect(z, -1.0)

    def pullback(self, z, c):
        return self._reflect_pullback(z, c, 1.0)

    def inverse_pullback(self, z, c):
        return self._reflect_pullback(z, c, -1.0)

    def jacobian(self, z):
        return self.matrix(1.0)

    def inverse_jacobian(self, z):
        return self.matrix(-1.0)


class GReflectorStack(SequenceMap):
    """
    Product of G-reflectors, applied in list order
    """

    def __init__(self, reflectors):
        reflectors = list(reflectors)
        if not reflectors:
            raise ValueError('a reflector stack needs at least one reflector')
        if len({reflector.dim for reflector in reflectors}) != 1:
            raise ValueError('reflectors act on different dimensions')
        self.reflectors = reflectors

    def __repr__(self):
        return '<GReflectorStack %d reflectors on R^%d>' % (len(self.reflectors), self.dim)

    @property
    def children(self):
        return self.reflectors

    @classmethod
    def initialize(cls, dim, count, rng, identity=True):
        bound = 1.0 / np.sqrt(dim)
        return cls([
            GReflector(rng.uniform(-bound, bound, dim), 0.0 if identity else rng.uniform(-1.0, 1.0))
            for _ in range(count)
        ])

    def matrix(self):
        return self.jacobian(np.zeros(self.dim))

    def describe(self):
        return {'dim': self.dim, 'count': len(self.reflectors)}

    @classmethod
    def from_description(cls, description):
        return cls([GReflector(np.zeros(description['dim'])) for _ in range(description['count'])])


class Inclusion:
    """
    Canonical inclusion iota: R^{2k} -> R^{2n} and its symplectic inverse, the truncation tau
    """

    def __init__(self, n, k):
        if not 1 <= k <= n:
            raise ValueError('latent half dimension %d must lie in [1, %d]' % (k, n))
        self.n = n
        self.k = k

    def __repr__(self):
        return '<Inclusion R^%d -> R^%d>' % (2 * self.k, 2 * self.n)

    def apply(self, y):
        y, single = as_batch(y)
        check_dimension(y, 2 * self.k, 'latent state')
        z = np.zeros((y.shape[0], 2 * self.n))
        z[:, :self.k] = y[:, :self.k]
        z[:, self.n:self.n + self.k] = y[:, self.k:]
        return from_batch(z, single)

    def truncate(self, z):
        z, single = as_batch(z)
        check_dimension(z, 2 * self.n)
        return from_batch(np.concatenate([z[:, :self.k], z[:, self.n:self.n + self.k]], axis=1), single)

    def apply_pullback(self, y, c):
        return self.truncate(c), []

    def truncate_pullback(self, z, c):
        return self.apply(c), []

    def matrix(self):
        return self.apply(np.eye(2 * self.k)).T

    def pseudo_inverse_matrix(self):
        return poisson_matrix(self.k).T @ self.matrix().T @ poisson_matrix(self.n)


class CompositeEmbedding:
    """
    sigma = H o G o iota with inverse tau o G^-1 o H^-1; either nonlinear or linear part may be absent.

    The autoencoder runs the same components the other way round:
    project = tau o G o H (encoder) and lift = H^-1 o G^-1 o iota (decoder).
    """
    directions = ('embed', 'inverse', 'project', 'lift')

    def __init__(self, inclusion, henon=None, reflectors=None):
        self.inclusion = inclusion
        self.henon = henon
        self.reflectors = reflectors
        for component in (henon, reflectors):
            if component is not None and component.dim != 2 * inclusion.n:
                raise ValueError('component acts on R^%d, expected R^%d' % (component.dim, 2 * inclusion.n))

    def __repr__(self):
        return '<CompositeEmbedding R^%d -> R^%d %s>' % (2 * self.k, 2 * self.n, self.variant)

    @property
    def n(self):
        return self.inclusion.n

    @property
    def k(self):
        return self.inclusion.k

    @property
    def variant(self):
        return '+'.join(name for name, component in (('henon', self.henon), ('greflector', self.reflectors))
                        if component is not None) or 'linear'

    def parameters(self):
        params = []
        for component in (self.henon, self.reflectors):
            if component is not None:
                params.extend(component.parameters())
        return params

    def _component_stage(self, name, inverse):
        component = getattr(self, name)
        if component is None:
            return []
        if inverse:
            return [Stage(component.inverse, component.inverse_pullback, component.inverse_jacobian, name)]
        return [Stage(component.apply, component.pullback, component.jacobian, name)]

    def stages(self, direction):
        inclusion = self.inclusion
        include = [Stage(inclusion.apply, inclusion.apply_pullback, lambda y: inclusion.matrix(), None)]
        truncate = [Stage(inclusion.truncate, inclusion.truncate_pullback,
                          lambda z: inclusion.pseudo_inverse_matrix(), None)]
        if direction == 'embed':
            return include + self._component_stage('reflectors', False) + self._component_stage('henon', False)
        if direction == 'inverse':
            return self._component_stage('henon', True) + self._component_stage('reflectors', True) + truncate
        if direction == 'project':
            return self._component_stage('henon', False) + self._component_stage('reflectors', False) + truncate
        if direction == 'lift':
            return include + self._component_stage('reflectors', True) + self._component_stage('henon', True)
        raise ValueError('unknown direction %s' % direction)

    def run(self, direction, z):
        z, single = as_batch(z)
        check_dimension(z, 2 * (self.k if direction in ('embed', 'lift') else self.n))
        return from_batch(chain_forward(self.stages(direction), z), single)

    def run_pullback(self, direction, z, c):
        z, single = as_batch(z)
        c, _ = as_batch(c)
        stages = self.stages(direction)
        c_in, stage_grads = chain_pullback(stages, z, c)
        by_owner = {stage.owner: grads for stage, grads in zip(stages, stage_grads)}
        grads = by_owner.get('henon', []) + by_owner.get('reflectors', [])
        return from_batch(c_in, single), grads

    def run_jacobian(self, direction, z):
        return chain_jacobian(self.stages(direction), z)

    def embed(self, y):
        return self.run('embed', y)

    def inverse(self, z):
        return self.run('inverse', z)

    def project(self, x):
        return self.run('project', x)

    def lift(self, y):
        return self.run('lift', y)


def map_pullback(symplectic_map, point, cotangent, direction=None):
    """
    (D map)^T cotangent at point, with gradient contributions for every trainable parameter
    :param direction: apply (default) or inverse for invertible maps; apply or truncate for an Inclusion;
        one of CompositeEmbedding.directions (default embed) for an embedding
    """
    if isinstance(symplectic_map, CompositeEmbedding):
        direction = direction or 'embed'
        if direction not in symplectic_map.directions:
            raise ValueError('unknown embedding direction %s' % direction)
        return symplectic_map.run_pullback(direction, point, cotangent)
    if isinstance(symplectic_map, Inclusion):
        pullbacks = {'apply': symplectic_map.apply_pullback, 'truncate': symplectic_map.truncate_pullback}
    else:
        pullbacks = {'apply': symplectic_map.pullback, 'inverse': symplectic_map.inverse_pullback}
    direction = direction or 'apply'
    if direction not in pullbacks:
        raise ValueError('%r has no %s direction' % (symplectic_map, direction))
    return pullbacks[direction](point, cotangent)


def symplecticity_defect(fn, point, mode='analytic', jacobian=None, h=1e-5):
    """
    Entrywise max-abs defect |D^T J_out D - J_in| of a map at a point
    :param fn: the map, a callable on 1-d arrays
    :param point: evaluation point
    :param mode: 'analytic' (uses jacobian) or 'finite-diff'
    :param jacobian: callable returning the analytic Jacobian at a point
    :param h: finite-difference step
    """
    point = np.asarray(point, dtype=np.float64)
    if mode == 'analytic':
        if jacobian is None:
            raise ValueError('analytic mode needs a jacobian')
        derivative = np.asarray(jacobian(point), dtype=np.float64)
    elif mode == 'finite-diff':
        derivative = finite_diff_jacobian(fn, point, h)
    else:
        raise ValueError('unknown defect mode %s' % mode)
    check_finite(derivative, 'Jacobian')
    rows, cols = derivative.shape
    if rows % 2 or cols % 2:
        raise ValueError('symplectic maps act between even-dimensional spaces')
    defect = derivative.T @ poisson_matrix(rows // 2) @ derivative - poisson_matrix(cols // 2)
    return float(np.max(np.abs(defect)))
