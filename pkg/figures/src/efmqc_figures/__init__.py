"""Read-only figure rendering for dynamics-run CSV outputs.

This package consumes the run CSVs (and model-inspection CSVs) through
their documented schema only: commented ``# key = value`` header lines
followed by a named-column table.  Unit conversions are taken from the CSV
header, never recomputed here.
"""

__version__ = "0.1.0"

from efmqc_figures.spec import FigureSpec, ValidationError
from efmqc_figures.plots import render

__all__ = ["FigureSpec", "ValidationError", "render"]
