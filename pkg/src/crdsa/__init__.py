"""Random access (SA/CRDSA) stability, delay and first-exit-time toolkit."""

__version__ = "0.1.0"
