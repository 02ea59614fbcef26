"""SNR-guided frequency-domain underwater image enhancement toolkit."""

__version__ = "0.1.0"
