"""Exception hierarchy shared across the toolkit."""


class UrbanflowError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(UrbanflowError):
    """Domain object violates an invariant (bad polygon, non-positive height, ...)."""


class FormatError(UrbanflowError):
    """On-disk artifact is malformed: bad magic, unknown version, unparseable text."""


class IntegrityError(UrbanflowError):
    """Artifact is structurally valid but inconsistent: truncated payload, hash mismatch."""


class SamplingBudgetError(UrbanflowError):
    """Tile sampler ran out of attempts before accepting the requested count."""

    def __init__(self, requested: int, accepted: int, attempts: int):
        self.requested = requested
        self.accepted = accepted
        self.attempts = attempts
        super().__init__(
            f"accepted {accepted}/{requested} tiles after {attempts} attempts"
        )


class BlockedDomainError(UrbanflowError):
    """No fluid path connects the inflow edge to the outflow edge."""
