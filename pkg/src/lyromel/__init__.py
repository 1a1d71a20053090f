"""Lyrics-conditioned melody generation with a from-scratch LSTM-GAN."""

__version__ = "0.1.0"
