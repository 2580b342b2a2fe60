"""Relation-aware image captioning: gated graph convolution over detected
regions feeding a transformer decoder, built on a small numpy autodiff."""

__version__ = "0.1.0"
