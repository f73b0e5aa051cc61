"""netwarden: header-only IoT traffic modeling and one-class botnet
anomaly detection."""

__version__ = "0.1.0"
