"""Spiking convolutional network engine for single-object localization.

Trains an encoder-decoder LIF network with per-layer local surrogate
gradient learning and fixed random linear readouts; images enter as
Poisson-rate spike trains and leave as a single bounding-box prediction.
"""

__version__ = "0.1.0"
