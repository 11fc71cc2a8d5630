"""Critical Set Laboratory: frequency, effective critical sets and coverings for harmonic functions."""

__version__ = "0.1.0"
__author__ = "Critical Set Lab Team"
