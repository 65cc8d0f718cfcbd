"""Channel estimation laboratory: classical and ReLU-network estimators."""

__version__ = "0.1.0"
