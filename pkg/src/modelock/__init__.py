"""Mode-locked fiber laser simulation and self-tuning control."""

__version__ = "0.1.0"
