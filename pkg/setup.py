#!/usr/bin/env python
import importlib
import os
import sys
import warnings

from setuptools import find_packages, setup

if sys.version_info[0:2] < (3, 7):
    warnings.warn('This package will only run on Python version 3.7+')  # noqa: B028

root_path = os.path.abspath(os.path.dirname(__file__))

with open(os.path.join(root_path, 'README.rst')) as readme:
    README = readme.read()

install_requires = ['numpy>=1.17', 'scipy', 'PyYAML']
tests_require = [
    'flake8', 'flake8-bugbear', 'flake8-quotes', 'flake8-blind-except', 'flake8-debugger', 'pep8-naming',
]

package_info = importlib.import_module('symplectic_rom')

setup(
    name='symplectic-rom',
    version=package_info.__version__,
    author=package_info.__author__,
    packages=find_packages(exclude=['tests']),
    include_package_data=True,
    license='MIT',
    description='Symplectic reduced-order models for Hamiltonian systems with Hénon networks and G-reflectors',
    long_description=README,
    keywords='symplectic hamiltonian model-reduction henon-net',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    install_requires=install_requires,
    tests_require=tests_require,
    test_suite='tests',
    entry_points={
        'console_scripts': ['symplectic-rom = symplectic_rom.cli:main'],
    },
)
