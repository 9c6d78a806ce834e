"""Score-matching toolkit for transformer Hawkes processes.

Trains self-attention intensity models on marked event sequences with
(denoising) score matching, generates arrival-time samples by Langevin
dynamics, and evaluates calibration of the resulting uncertainty estimates
against a classical Hawkes oracle.
"""

__version__ = "0.1.0"
