"""Co-verification harness and data pipeline for C/CUDA translation."""

__version__ = "0.1.0"
