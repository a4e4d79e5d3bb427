"""Framework for topology-constrained internet distributed applications."""

__version__ = "0.1.0"
