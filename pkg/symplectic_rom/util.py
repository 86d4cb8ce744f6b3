import logging

import numpy as np

logger = logging.getLogger('.'.join(__name__.split('.')[:-1]))


# errors


class ConfigError(ValueError):
    """
    Invalid run configuration or incompatible inputs
    """


class IntegrationError(RuntimeError):
    """
    An implicit integrator stage failed to converge
    """

    def __init__(self, message, residuals=()):  # noqa: B042
        super().__init__(message)
        self.residuals = list(residuals)


class GenerationError(RuntimeError):
    """
    One or more trajectories could not be generated
    """

    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__('%d trajectories failed: %s' % (
            len(self.failures),
            '; '.join('#%d %s' % failure for failure in self.failures),
        ))


class NonFiniteStateError(ArithmeticError):
    """
    A rollout produced NaN or Inf entries
    """

    def __init__(self, step):
        super().__init__('non-finite state at step %d' % step)
        self.step = step


class DivergenceError(ArithmeticError):
    """
    Training loss became non-finite; `model` holds the last-good parameters
    """

    def __init__(self, epoch, model=None, report=None):  # noqa: B042
        super().__init__('training diverged in epoch %d' % epoch)
        self.epoch = epoch
        self.model = model
        self.report = report


# array helpers


def as_batch(z):
    """
    Views a single vector or a batch of vectors as a 2-d float64 array
    :param z: array of shape (d,) or (batch, d)
    :return: (2-d array, whether the input was a single vector)
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        return z[np.newaxis, :], True
    if z.ndim != 2:
        raise ValueError('expected a vector or a batch of vectors, got shape %s' % (z.shape,))
    return z, False


def from_batch(z, single):
    return z[0] if single else z


def check_dimension(z, dimension, name='state'):
    if z.shape[-1] != dimension:
        raise ValueError('%s has dimension %d, expected %d' % (name, z.shape[-1], dimension))


def check_finite(array, name='array'):
    if not np.all(np.isfinite(array)):
        raise ArithmeticError('%s contains non-finite entries' % name)


def add_into(totals, increments):
    """
    Accumulates a list of gradient arrays into another, in order
    """
    assert len(totals) == len(increments), 'gradient lists are not aligned'
    for total, increment in zip(totals, increments):
        total += increment
    return totals


# descriptors


class Descriptor:
    """
    A class attribute that performs an operation when retrieved and optionally caches the result
    """

    def __init__(self, cached=True):
        self.cached = cached

    def __set_name__(self, owner, name):
        self.name = name

    def __get__(self, instance, owner):
        if instance is None:
            return self
        value = self.get_value(instance)
        if self.cached:
            instance.__dict__[self.name] = value
        return value

    def get_value(self, instance):
        raise NotImplementedError
