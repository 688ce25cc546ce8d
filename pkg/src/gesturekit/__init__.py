"""Hand-gesture recognition pipeline and gesture-driven HMI harness."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
WEIGHTS_FORMAT = "GKW1"
WEIGHTS_VERSION = 1
