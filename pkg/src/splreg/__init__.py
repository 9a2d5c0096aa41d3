"""Self-predictive representation learning with non-centered redundancy reduction."""

__version__ = "0.1.0"
