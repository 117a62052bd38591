"""mrmkit: simulation and verification toolkit for log-infinitely
divisible multifractal random measures, their random metric, and the
dimension-change (KPZ) relation in one and two dimensions."""

__version__ = "0.1.0"

from . import chaos2d, cones, fields, fractal, levy, measure  # noqa: F401
from .errors import MrmError, NumericalError, ValidationError  # noqa: F401
from .seeding import derive_seed  # noqa: F401
