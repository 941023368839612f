"""Realizability of gradient fields as electric fields.

Constructs conductivities that make a given (periodic) gradient field, or
matrix of gradients, divergence free, and checks the corresponding
realizability criteria numerically.
"""

__version__ = "0.1.0"
