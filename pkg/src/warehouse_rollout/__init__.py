"""Multiagent rollout with random reshuffling for warehouse robot path planning."""

__version__ = "0.1.0"
