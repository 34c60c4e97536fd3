"""Fractional p-sublaplacian ground states on H^1 and R^N, and best constants."""

from ._nsg import *  # noqa: F401,F403
from ._nsg import __doc__  # noqa: F401
