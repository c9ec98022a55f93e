"""Streamline plausibility labelling from rule-based supervisors and a
multi-branch 1D CNN that learns to replicate them."""

__version__ = "0.1.0"
