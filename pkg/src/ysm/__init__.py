"""Power-weighted Simon string growth and its branching-process limits."""

__version__ = "0.1.0"
