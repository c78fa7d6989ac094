"""Direct multipath-based SLAM from raw frequency-domain radio snapshots."""

__version__ = "0.1.0"
