"""Lilypad fields and branching random walks in Pareto random environments."""

__version__ = "0.1.0"

from .env import ModelParams, derive_exponents, scaling_factors  # noqa: E402,F401
