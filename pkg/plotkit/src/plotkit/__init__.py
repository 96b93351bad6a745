"""Figure generation for the CSV artifacts of the nfr pipeline."""

from .figures import KINDS, FigureError, FigureSpec, read_csv, render

__version__ = "0.1.0"
