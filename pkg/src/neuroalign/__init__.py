"""Guided-attention MLM fine-tuning and brain-decoding evaluation, desk scale."""

__version__ = "0.1.0"
