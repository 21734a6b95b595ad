"""Partition function bounds, the optimizers built on them, and their checks."""
