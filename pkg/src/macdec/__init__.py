"""Planning toolkit for decentralized multi-agent problems with macro-actions."""

__version__ = "0.1.0"
