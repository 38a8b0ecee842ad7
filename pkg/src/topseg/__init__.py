"""Heart-sound segmentation from multi-scale persistent-homology features."""

__version__ = "0.1.0"
