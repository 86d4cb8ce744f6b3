"""
Dense numerics shared by the symplectic maps: the scalar potential network with its
differentiation contract, Adam, seeded random streams and finite-difference oracles
"""
from dataclasses import dataclass, field

import numpy as np

from .util import as_batch, check_dimension, check_finite, from_batch

__all__ = (
    'PotentialNet', 'QuadraticPotential', 'AdamState', 'RngStream',
    'poisson_matrix', 'potential_value', 'potential_input_gradient', 'potential_pullbacks',
    'adam_step', 'end_epoch', 'finite_diff_jacobian', 'pack', 'unpack_into', 'relative_error',
)


def poisson_matrix(n):
    """
    The canonical Poisson matrix J_{2n} = [[0, I], [-I, 0]]
    :param n: half dimension
    """
    identity = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, identity], [-identity, zero]])


# ELU with alpha = 1; second derivative taken one-sided (0) at the kink


def elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def elu_prime(a):
    return np.where(a > 0, 1.0, np.exp(np.minimum(a, 0.0)))


def elu_second(a):
    return np.where(a < 0, np.exp(np.minimum(a, 0.0)), 0.0)


class PotentialNet:
    """
    Scalar MLP potential V: R^m -> R with ELU hidden layers and an affine output
    """

    def __init__(self, widths, weights=None, biases=None):
        widths = [int(width) for width in widths]
        if len(widths) < 2 or widths[-1] != 1 or min(widths) < 1:
            raise ValueError('potential widths must be positive and end in 1, got %s' % widths)
        self.widths = widths
        shapes = list(zip(widths[:-1], widths[1:]))
        if weights is None:
            weights = [np.zeros(shape) for shape in shapes]
        if biases is None:
            biases = [np.zeros(shape[1]) for shape in shapes]
        self.weights = [np.array(weight, dtype=np.float64) for weight in weights]
        self.biases = [np.array(bias, dtype=np.float64).reshape(-1) for bias in biases]
        for shape, weight, bias in zip(shapes, self.weights, self.biases):
            if weight.shape != shape or bias.shape != (shape[1],):
                raise ValueError('layer shapes %s / %s do not match widths %s' % (weight.shape, bias.shape, widths))

    def __repr__(self):
        return '<PotentialNet %s>' % 'x'.join(map(str, self.widths))

    @classmethod
    def initialize(cls, widths, rng, zero_output=True):
        """
        Draws weights and biases uniformly from [-1/sqrt(fan-in), 1/sqrt(fan-in)]
        :param widths: layer widths, input first, ending in 1
        :param rng: RngStream
        :param zero_output: zero the final affine layer so that V is constant
        """
        net = cls(widths)
        for index, weight in enumerate(net.weights):
            if zero_output and index == len(net.weights) - 1:
                continue
            bound = 1.0 / np.sqrt(weight.shape[0])
            weight[...] = rng.uniform(-bound, bound, weight.shape)
            net.biases[index][...] = rng.uniform(-bound, bound, net.biases[index].shape)
        return net

    @property
    def input_dim(self):
        return self.widths[0]

    def parameters(self):
        params = []
        for weight, bias in zip(self.weights, self.biases):
            params.extend((weight, bias))
        return params

    def preactivations(self, y):
        """
        Hidden pre-activations for a batch, used to keep test points away from ELU kinks
        """
        h, _ = as_batch(y)
        values = []
        for weight, bias in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ weight + bias
            values.append(a)
            h = elu(a)
        return values

    def value(self, y):
        h, single = as_batch(y)
        check_dimension(h, self.input_dim, 'potential input')
        for weight, bias in zip(self.weights[:-1], self.biases[:-1]):
            h = elu(h @ weight + bias)
        return from_batch((h @ self.weights[-1] + self.biases[-1])[:, 0], single)

    def input_gradient(self, y):
        h, single = as_batch(y)
        check_dimension(h, self.input_dim, 'potential input')
        slopes = []
        for weight, bias in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ weight + bias
            slopes.append(elu_prime(a))
            h = elu(a)
        g = np.broadcast_to(self.weights[-1][:, 0], h.shape)
        for weight, slope in zip(reversed(self.weights[:-1]), reversed(slopes)):
            g = (g * slope) @ weight.T
        return from_batch(np.array(g), single)

    def pullbacks(self, y, w):
        """
        Pulls a cotangent w on grad V(y) back to the input and to the parameters
        :param y: points, shape (m,) or (batch, m)
        :param w: cotangents congruent with y
        :return: (Hessian-vector products H_V(y) w, parameter gradients summed over the batch)
        """
        h, single = as_batch(y)
        hd, _ = as_batch(w)
        check_dimension(h, self.input_dim, 'potential input')
        if hd.shape != h.shape:
            raise ValueError('cotangent shape %s does not match input shape %s' % (hd.shape, h.shape))
        # forward pass carrying the tangent along w; s = w . grad V(y)
        cache = []
        for weight, bias in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ weight + bias
            ad = hd @ weight
            cache.append((h, hd, a, ad))
            h = elu(a)
            hd = elu_prime(a) * ad
        weight_grads = [None] * len(self.weights)
        bias_grads = [None] * len(self.weights)
        weight_grads[-1] = hd.sum(axis=0)[:, np.newaxis]
        bias_grads[-1] = np.zeros_like(self.biases[-1])
        hd_bar = np.broadcast_to(self.weights[-1][:, 0], hd.shape)
        h_bar = np.zeros_like(hd)
        for index in reversed(range(len(cache))):
            h_in, hd_in, a, ad = cache[index]
            slope = elu_prime(a)
            ad_bar = hd_bar * slope
            a_bar = hd_bar * ad * elu_second(a) + h_bar * slope
            weight_grads[index] = h_in.T @ a_bar + hd_in.T @ ad_bar
            bias_grads[index] = a_bar.sum(axis=0)
            h_bar = a_bar @ self.weights[index].T
            hd_bar = ad_bar @ self.weights[index].T
        param_grads = []
        for weight_grad, bias_grad in zip(weight_grads, bias_grads):
            param_grads.extend((weight_grad, bias_grad))
        return from_batch(np.array(h_bar), single), param_grads

    def hessian(self, y):
        y = np.asarray(y, dtype=np.float64)
        basis = np.eye(self.input_dim)
        hvp, _ = self.pullbacks(np.tile(y, (self.input_dim, 1)), basis)
        return hvp


class QuadraticPotential:
    """
    Fixed test potential V(y) = scale/2 |y|^2 with no trainable parameters
    """

    def __init__(self, dim, scale=1.0):
        self.input_dim = int(dim)
        self.scale = float(scale)

    def __repr__(self):
        return '<QuadraticPotential %d>' % self.input_dim

    def parameters(self):
        return []

    def value(self, y):
        h, single = as_batch(y)
        check_dimension(h, self.input_dim, 'potential input')
        return from_batch(0.5 * self.scale * np.sum(h * h, axis=1), single)

    def input_gradient(self, y):
        h, single = as_batch(y)
        check_dimension(h, self.input_dim, 'potential input')
        return from_batch(self.scale * h, single)

    def pullbacks(self, y, w):
        h, single = as_batch(y)
        check_dimension(h, self.input_dim, 'potential input')
        hd, _ = as_batch(w)
        return from_batch(self.scale * hd, single), []

    def hessian(self, y):
        return self.scale * np.eye(self.input_dim)


def potential_value(net, y):
    return net.value(y)


def potential_input_gradient(net, y):
    return net.input_gradient(y)


def potential_pullbacks(net, y, w):
    return net.pullbacks(y, w)


# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    epoch: int = 0
    first_moments: list = field(default_factory=list)
    second_moments: list = field(default_factory=list)

    @classmethod
    def create(cls, params, **kwargs):
        state = cls(**kwargs)
        state.first_moments = [np.zeros_like(param) for param in params]
        state.second_moments = [np.zeros_like(param) for param in params]
        return state


def adam_step(state, params, grads):
    """
    One bias-corrected Adam update, applied in place
    :param state: AdamState whose moments are congruent with params
    :param params: list of parameter arrays
    :param grads: list of gradient arrays
    :return: (params, state)
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise ValueError('parameter, gradient and moment lists differ in length')
    for param, grad, moment in zip(params, grads, state.first_moments):
        if param.shape != np.shape(grad) or param.shape != moment.shape:
            raise ValueError('shape mismatch: parameter %s, gradient %s' % (param.shape, np.shape(grad)))
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    step_size = state.lr / correction1
    for param, grad, first, second in zip(params, grads, state.first_moments, state.second_moments):
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * (grad * grad)
        param -= step_size * first / (np.sqrt(second / correction2) + state.epsilon)
    return params, state


def end_epoch(state):
    state.lr *= state.decay
    state.epoch += 1
    return state


# randomness


class RngStream:
    """
    Seeded PCG64 stream; child streams derive from the same seed via spawn keys
    """
    algorithm = 'PCG64'

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(part) for part in key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self):
        return '<RngStream %s seed=%d key=%s>' % (self.algorithm, self.seed, self.key)

    def child(self, *key):
        return RngStream(self.seed, self.key + key)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def permutation(self, count):
        return self.generator.permutation(count)


# finite differences and parameter vectors


def finite_diff_jacobian(f, x, h=1e-6):
    """
    Central-difference Jacobian of a vector map
    :param f: callable taking and returning 1-d arrays
    :param x: evaluation point
    :param h: step, must be positive
    :return: array of shape (dim f(x), dim x)
    """
    if h <= 0:
        raise ValueError('finite-difference step must be positive')
    x = np.array(x, dtype=np.float64)
    columns = []
    for index in range(x.size):
        step = np.zeros_like(x)
        step[index] = h
        forward = np.asarray(f(x + step), dtype=np.float64)
        backward = np.asarray(f(x - step), dtype=np.float64)
        check_finite(forward, 'finite-difference evaluation')
        check_finite(backward, 'finite-difference evaluation')
        columns.append((forward - backward) / (2.0 * h))
    return np.stack(columns, axis=-1)


def pack(arrays):
    if not arrays:
        return np.zeros(0)
    return np.concatenate([np.ravel(array) for array in arrays])


def unpack_into(arrays, vector):
    offset = 0
    for array in arrays:
        array[...] = np.reshape(vector[offset:offset + array.size], array.shape)
        offset += array.size
    if offset != len(vector):
        raise ValueError('vector has %d entries, parameters need %d' % (len(vector), offset))
    return arrays


def relative_error(actual, expected):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    scale = max(np.linalg.norm(actual), np.linalg.norm(expected))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(actual - expected) / scale)
