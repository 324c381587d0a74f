"""Word recognition from a maxout CNN feature sequence, a bidirectional LSTM and CTC."""

__version__ = "0.1.0"
