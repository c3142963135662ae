"""Inference attacks, defenses and privacy audits on shared gradients."""

__version__ = "0.1.0"
