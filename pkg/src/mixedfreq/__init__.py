"""Offline Q-learning from datasets that mix several control frequencies."""

__version__ = "0.1.0"
