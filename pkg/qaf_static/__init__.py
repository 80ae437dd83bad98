"""Quantizer-aggregated codec features for synthetic spoof detection."""
try:
    from ._version import version as __version__
except ImportError:  # not installed from a tagged checkout
    __version__ = '0.0.0'
