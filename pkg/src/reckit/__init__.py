"""reckit: desk-scale constructions and diagnostics for low-dimensional
boundaries — dyadic cube trees, flatness numbers, corona stopping times,
bilipschitz parametrizations, replacement surfaces, sawtooth domains,
a degenerate elliptic solver, and dyadic extrapolation checks."""

__version__ = "0.1.0"
