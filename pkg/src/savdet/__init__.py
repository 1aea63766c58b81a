"""Self-supervised audio-visual forgery detection toolkit."""

__version__ = "0.1.0"
