"""Fair contextual bandits via constrained follow-the-regularized-leader."""

__version__ = "0.1.0"
