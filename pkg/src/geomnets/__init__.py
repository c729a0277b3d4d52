"""Geometric representation learning on molecules, crystals and proteins.

Self-contained: a small reverse-mode tensor engine, rotation algebra for
degree-typed features, cutoff graph construction (open and periodic),
invariant / spherical-tensor / vector message-passing families, supervised
and self-supervised training utilities, and a command-line interface.
"""

__version__ = "0.1.0"
