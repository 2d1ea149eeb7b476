"""Unknown-error detection by continuous coefficient mining and conformal inference."""

__version__ = "0.1.0"
