"""Pose-aided video person re-identification with recurrent graph convolution."""

__version__ = "0.1.0"
