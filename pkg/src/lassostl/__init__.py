"""Receding-horizon control of multi-agent linear systems under recurring STL tasks."""

__version__ = "0.1.0"
