"""Adversarial multi-label classification with a conditional WGAN-gp critic."""

__version__ = "0.1.0"
