VERSION = (0, 1)
__version__ = '.'.join(map(str, VERSION))
__author__ = 'Symplectic ROM developers'
