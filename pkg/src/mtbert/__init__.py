"""Multitask transformer fine-tuning with PCGrad loss pairing and an AC-GAN extension."""

__version__ = "0.1.0"
