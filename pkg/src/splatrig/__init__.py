"""splatrig: desk-scale surround-view Gaussian splatting pipeline."""

__version__ = "0.1.0"
