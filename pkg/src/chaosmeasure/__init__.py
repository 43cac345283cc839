"""Learned measurement partitions of chaotic maps and their entropy-rate certification."""

__version__ = "0.1.0"
