"""clothlab: a desk-scale laboratory for goal-conditioned world-model cloth
flattening with pick-and-place primitives."""

__version__ = "0.1.0"
