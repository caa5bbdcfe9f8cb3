"""Aspect sentiment classification with CRF structured attention."""

__version__ = "0.1.0"
