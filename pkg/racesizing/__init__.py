"""Joint minimum-race-time and battery-sizing optimization for electric race cars."""

__version__ = "0.1.0"
