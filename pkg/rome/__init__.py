"""rome – robust mixture models for fair regression."""
__version__ = "0.1.0"
