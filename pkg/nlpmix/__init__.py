"""nlpmix: non-local prior variable selection and model averaging for linear regression."""

__version__ = "0.1.0"
