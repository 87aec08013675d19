"""Sensor fault detection and isolation on residuals of learned
one-step predictors.

The pieces compose in pipeline order: dataset -> predictor -> residuals
-> sfd (batch detection) -> sfi (fault isolation), with evaluation and a
command line on top.
"""

__version__ = "0.1.0"
