"""Planning of passive electromagnetic skins on building facades."""

__version__ = "0.1.0"
