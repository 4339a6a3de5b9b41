"""Desk-scale speculative decoding with window-level drafter training.

Exactly computable tabular targets, a small analytic-gradient neural
drafter, distribution-preserving draft/verify decoding, and a
policy-optimization trainer with cost-aware and proximity rewards plus
divergence-aware window selection.
"""

__version__ = "0.1.0"
