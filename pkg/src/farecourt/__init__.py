"""Synthetic trajectory disputes, rule-calibrated multi-agent adjudication and ordinal rewards."""

from .errors import FarecourtError

__version__ = "0.1.0"

__all__ = ["FarecourtError", "__version__"]
