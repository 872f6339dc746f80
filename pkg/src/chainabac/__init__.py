"""Attribute-based access control over a hash-chained, replicated ledger."""

__version__ = "0.1.0"
