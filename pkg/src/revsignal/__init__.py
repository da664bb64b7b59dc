"""revsignal: mine review histories and model reviewer participation."""

__version__ = "0.1.0"
