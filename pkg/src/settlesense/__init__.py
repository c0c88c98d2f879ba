"""Reliability-based selection of settlement monitoring locations near tunnels."""

__version__ = "0.1.0"
