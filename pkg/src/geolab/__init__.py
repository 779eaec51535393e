"""geolab: numerical laboratory for geodesic flows on implicit hypersurfaces."""

__version__ = "0.1.0"

from .surface import SurfaceSpec, sphere, ellipsoid, torus  # noqa: F401
from .flow import PhaseState  # noqa: F401
