"""Perception-error modeling and adversarial planner stress-testing toolkit."""

__version__ = "0.1.0"
