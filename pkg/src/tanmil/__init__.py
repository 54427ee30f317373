"""Motion-aware features and attention MIL ranking for video anomaly detection."""

__version__ = "0.1.0"
