"""Transformer over visit sequences with Gaussian-mixture temporal heads.

Regions are predicted by a categorical head; travel time and stay duration by
mixture density heads conditioned on the predicted region (and, for the
duration, on the arrival time). Sequences with gaps are rewritten into an
infilling format so a single left-to-right model can fill them.
"""

__version__ = "0.1.0"
