"""Graph diffusion network surrogates for agent-based models."""

__version__ = "0.1.0"
