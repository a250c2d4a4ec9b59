"""Energy-aware recharge scheduling for robot teams sharing one charging station."""

__version__ = "0.1.0"
