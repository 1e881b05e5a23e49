"""CMC foliations of asymptotically flat 3-metrics: solver, masses, momenta, coordinates."""

__version__ = "0.1.0"
