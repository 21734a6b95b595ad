"""pfbound - quadratic partition function bounds and the stochastic optimizers built on them."""

__version__ = "0.1.0"
