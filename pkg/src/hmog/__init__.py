"""Hierarchical and flat mixtures of generators with multi-generator GAN baselines."""

__version__ = "0.1.0"
