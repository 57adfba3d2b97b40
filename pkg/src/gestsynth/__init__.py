"""Co-speech gesture synthesis: representation, diffusion, guidance, metrics."""

__version__ = "0.1.0"
