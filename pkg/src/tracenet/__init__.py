"""Trace-driven characterization of HPC interconnect traffic and congestion."""

__version__ = "0.1.0"
