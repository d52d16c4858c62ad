"""Symbolic type calculus and numerical verification for admissible integral
kernels on strictly pseudoconvex domains whose defining function may have
boundary critical points."""

__version__ = "0.1.0"
