"""Exception types shared across the package."""

from __future__ import annotations


class SyncError(Exception):
    """Base class for all package errors."""


class ValidationError(SyncError):
    """Input failed a structural or naming rule."""


class NotFoundError(SyncError):
    """Requested object does not exist."""


class AlreadyExistsError(SyncError):
    """Create attempted for a key that is already present."""


class ConflictError(SyncError):
    """Optimistic-concurrency check failed; the object changed underneath."""

    def __init__(self, msg: str, current_version: int | None = None):
        super().__init__(msg)
        self.current_version = current_version


class RateLimitedError(SyncError):
    """Write rejected by the store's rate limiter; retry after ``retry_after``."""

    def __init__(self, msg: str, retry_after: float):
        super().__init__(msg)
        self.retry_after = retry_after


class VersionTooOldError(SyncError):
    """Watch start version predates retained history; caller must relist."""


class AuthenticationUnknownError(SyncError):
    """Credential fingerprint does not match any registered tenant."""


class DeadlineExceededError(SyncError):
    """A scenario failed to complete within its watchdog budget."""
