"""Out-of-distribution anomaly scorers, density baselines and detection metrics."""

__version__ = "0.1.0"
FORMAT_VERSION = 1
