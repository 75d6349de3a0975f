"""Residual-autoencoder recovery of distorted broadband receiver waveforms.

Synthesizes radar echoes, passes them through simulated defective analog
links, trains a residual convolutional autoencoder to undo the distortion and
evaluates the recovery.
"""

__version__ = "0.1.0"
