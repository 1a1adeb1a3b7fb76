"""Figure rendering for stored simulator outputs (CSV/JSON formats v1)."""

__version__ = "0.1.0"

from .io import (
    SchemaError,
    VersionError,
    classify_and_read,
    read_envelope,
    read_fits,
    read_fractions,
    read_record,
    read_spectrum,
    read_summary,
)
from .render import FAMILIES, DEFAULT_STYLE, FigureSpec, load_style, render
