"""Continuous methane leak monitoring toolkit.

Forward plume modelling, observation record generation, leak source
inversion with subspace attribution, stochastic wind models, coverage
evaluation and optimal sensor placement. The package is exposed through
a FastAPI service (``leakmon.service``) and a thin-client CLI
(``leakmon.cli``).
"""

__version__ = "0.1.0"
