"""Price-maker battery scheduling across energy, reserve and regulation markets."""

__version__ = "0.1.0"
