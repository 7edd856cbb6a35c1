"""Group-sequential trials under a joint longitudinal/time-to-event model."""

__version__ = "0.1.0"
