"""Figure generation for cooperative map matching experiment CSVs."""
from .figures import KINDS, FigureSpec, SchemaError, build_figure, render

__version__ = "0.1.0"
