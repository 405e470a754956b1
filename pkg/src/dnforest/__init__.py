"""Domain-name-forest fingerprints for detecting device network access."""

__version__ = "0.1.0"
