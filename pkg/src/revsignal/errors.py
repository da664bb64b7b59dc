"""Exception types shared across the package."""


class RevsignalError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RevsignalError):
    """Bad or missing input: schema violations, unknown ids, absent files."""


class IngestError(RevsignalError):
    """A fetch from a Gerrit server failed.

    ``resume_offset`` holds the pagination offset at which a retry can
    pick up without re-downloading earlier pages.
    """

    def __init__(self, message, resume_offset=None):
        super().__init__(message)
        self.resume_offset = resume_offset


class FitError(RevsignalError):
    """Model fitting failed (singular design, degenerate outcome, ...)."""
