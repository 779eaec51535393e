"""Figure rendering for geolab artifacts."""

__version__ = "0.1.0"
STYLE_VERSION = 1

from .render import FigureRequest, render, SchemaMismatch, EmptyInput  # noqa: F401
