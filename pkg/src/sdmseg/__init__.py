"""Signed distance map segmentation toolkit."""
__version__ = "0.1.0"
