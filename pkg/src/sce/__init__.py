"""Naive few-shot rule extraction on sequence-consistency tests."""

__version__ = "0.1.0"
