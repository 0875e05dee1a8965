"""Learned coordinate transformations to the unit reference square, with
physics-informed PDE solvers on irregular 2D domains."""

__version__ = "0.1.0"
