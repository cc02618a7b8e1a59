"""qmlab: numerical laboratory for CMI-based eavesdropping on oracle toys."""

__version__ = "0.1.0"
