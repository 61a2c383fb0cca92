"""Sequence labeling with discrete, neural, and joint linear-chain CRF models."""

__version__ = "0.1.0"
