"""Query-by-humming: TV-denoised melody contours classified by a fully convolutional network."""

__version__ = "0.1.0"
