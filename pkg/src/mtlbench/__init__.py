"""Desk-scale multimodal trajectory prediction with a transfer-learning harness."""

__version__ = "0.1.0"
