"""Room impulse response simulation, reciprocity checks and reciprocity-aware acoustic fields."""

__version__ = "0.1.0"
