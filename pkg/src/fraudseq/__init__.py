"""Unsupervised anomaly detection for discrete event sequences.

Pipeline: generative sequence models (next-token LSTM, seq2seq autoencoder
with attention) turn per-position prediction errors into anomaly scores,
optionally normalized per class through empirical distribution functions,
pooled per patient, and thresholded at a target recall.
"""

__version__ = "0.1.0"
