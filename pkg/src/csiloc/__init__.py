"""csiloc: hardware-free CSI-fingerprint indoor localization toolkit.

Simulates location-dependent wireless channels, encodes/decodes CSI packet
logs, runs the fingerprint preprocessing pipeline and trains two small
convolutional networks (coordinate regression and grid classification) on a
from-scratch float64 neural-network core.
"""

__version__ = "0.1.0"

from . import channel, cli, codec, models, nn, preprocess, synth, training

__all__ = ["channel", "codec", "synth", "preprocess", "nn", "models",
           "training", "cli", "__version__"]
