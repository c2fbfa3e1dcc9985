"""Per-object time-to-contact ground truth, simulation and evaluation."""

__version__ = "0.1.0"
