"""Single trapped-ion coherence simulator and analysis pipeline."""

__version__ = "0.1.0"
