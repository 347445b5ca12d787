"""Figure renderer for specseg run outputs."""

__version__ = "0.1.0"
