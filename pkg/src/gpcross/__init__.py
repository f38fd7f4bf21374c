"""Sharp bounds and two-term asymptotics for boundary non-crossing
probabilities of Gaussian processes."""

__version__ = "0.1.0"
