"""Cross-lingual joint intent/slot models with pluggable embeddings, at desk scale."""

__version__ = "0.1.0"
