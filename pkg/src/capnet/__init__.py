"""Country-product export networks and the binomial capabilities model."""

__version__ = "0.1.0"
