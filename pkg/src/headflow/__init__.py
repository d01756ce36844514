"""headflow: desk-scale streaming audio-driven latent video engine and training lab."""

__version__ = "0.1.0"
