"""Cascaded retrieval-augmented question answering for cybersecurity corpora."""

__version__ = "0.1.0"
