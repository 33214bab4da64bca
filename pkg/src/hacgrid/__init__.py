"""Grid-forming converter control simulation on small power networks."""
__version__ = "0.1.0"
