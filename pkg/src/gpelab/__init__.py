"""cG-LOD and cG-P^k solvers for the 1D time-dependent Gross-Pitaevskii equation."""

__version__ = "0.1.0"
