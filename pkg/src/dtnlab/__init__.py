"""A compact Bundle Protocol stack with a deterministic disruption simulator."""

__version__ = "0.1.0"
