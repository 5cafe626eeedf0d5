"""MultiFactor question generation: phrase-enhanced transformers and full-answer planning."""

__version__ = "0.1.0"
