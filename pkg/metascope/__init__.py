"""App de comandos del toolkit metascope."""

__version__ = "1.0.0"
