"""Calibration and evaluation toolkit for a three-channel NIR glucometer."""

from .data import ChannelSet, Cohort, Dataset, Prandial, SampleRecord, Sex

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "Cohort", "Dataset", "Prandial", "SampleRecord", "Sex",
    "__version__",
]
