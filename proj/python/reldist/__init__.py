"""Equivariant relative placement from point clouds."""

from ._reldist import *  # noqa: F401,F403
from ._reldist import __doc__  # noqa: F401

__version__ = "0.1.0"
