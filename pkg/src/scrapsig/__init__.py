"""Batch analytics for spotting misclassified plastic-scrap trade flows."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
