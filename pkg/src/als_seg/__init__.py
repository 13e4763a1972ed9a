"""Active-learning sample selection + GAN-based semi-supervised segmentation."""

__version__ = "0.1.0"
