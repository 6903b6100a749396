"""Formation tracking control of underactuated surface vessels."""

__version__ = "0.1.0"
