"""
Binary containers: concatenated little-endian float64 arrays with a JSON sidecar at `<path>.json`
"""
import json
import os

import numpy as np

from .util import ConfigError, logger

FORMAT_VERSION = 1
dtype = np.dtype('<f8')


def sidecar_path(path):
    return '%s.json' % path


def write_arrays(path, arrays, metadata):
    """
    Writes arrays back to back as little-endian float64 and records their shapes in the sidecar
    :param path: container path
    :param arrays: list of (name, array) pairs
    :param metadata: JSON-serializable mapping stored alongside the shapes
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    layout = []
    with open(path, 'wb') as container:
        for name, array in arrays:
            array = np.ascontiguousarray(array, dtype=dtype)
            container.write(array.tobytes(order='C'))
            layout.append({'name': name, 'shape': list(array.shape)})
    metadata = dict(metadata, format_version=FORMAT_VERSION, arrays=layout)
    with open(sidecar_path(path), 'w') as sidecar:
        json.dump(metadata, sidecar, indent=2, sort_keys=True)
        sidecar.write('\n')
    logger.debug('Wrote %d arrays to %s' % (len(layout), path))


def read_metadata(path):
    try:
        with open(sidecar_path(path)) as sidecar:
            metadata = json.load(sidecar)
    except (OSError, ValueError) as e:
        raise ConfigError('Cannot read metadata for %s: %s' % (path, e))
    if metadata.get('format_version') != FORMAT_VERSION:
        raise ConfigError('%s has unsupported format version %s' % (path, metadata.get('format_version')))
    return metadata


def read_arrays(path):
    """
    :return: (metadata, list of (name, array) pairs in stored order)
    """
    metadata = read_metadata(path)
    try:
        raw = np.fromfile(path, dtype=dtype)
    except OSError as e:
        raise ConfigError('Cannot read %s: %s' % (path, e))
    arrays = []
    offset = 0
    for entry in metadata['arrays']:
        shape = tuple(entry['shape'])
        size = int(np.prod(shape, dtype=np.int64))
        if offset + size > raw.size:
            raise ConfigError('%s is shorter than its sidecar describes' % path)
        arrays.append((entry['name'], raw[offset:offset + size].reshape(shape).astype(np.float64)))
        offset += size
    if offset != raw.size:
        raise ConfigError('%s has %d trailing values' % (path, raw.size - offset))
    return metadata, arrays
