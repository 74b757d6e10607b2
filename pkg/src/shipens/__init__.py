"""Ship maneuvering simulation, ensemble model learning, and probabilistic prediction."""

__version__ = "0.1.0"
