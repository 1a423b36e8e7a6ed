"""Counterexample-guided data augmentation for object detectors."""

__version__ = "0.1.0"
