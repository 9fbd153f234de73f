"""Fragment-aware molecular representation learning with graph state-space encoders."""

__version__ = "0.1.0"
