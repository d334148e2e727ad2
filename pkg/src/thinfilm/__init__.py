"""Operator-splitting simulator for the stochastic thin-film equation on the unit 2-torus."""

__version__ = "0.1.0"
