"""Single-layer convolutional joint intent/slot model with structured filter pruning."""

__version__ = "0.1.0"
