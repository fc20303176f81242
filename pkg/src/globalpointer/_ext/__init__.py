"""Compiled numerical kernels (optional; see :mod:`globalpointer.kernels`)."""
