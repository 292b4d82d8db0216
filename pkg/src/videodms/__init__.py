"""Desk-scale multi-task driver-state estimation from facial video.

Numpy/scipy implementation of the full stack: a reverse-mode autodiff
core, facial preprocessing into five heterogeneous inputs, a synthetic
data generator with known ground truth, a spatio-temporal
mixture-of-experts network with task gates, losses, training, and
evaluation.
"""

__version__ = "0.1.0"
