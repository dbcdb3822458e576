"""Exception hierarchy shared by all cystseg modules."""
from __future__ import annotations


class CystsegError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(CystsegError, ValueError):
    """Input data or parameters are malformed."""


class ConfigError(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class StatsError(ValidationError):
    pass


class MetricError(ValidationError):
    """A metric ratio is undefined for the given tally."""


class EmptyDatasetError(MetricError):
    pass


class NoPredictionsError(MetricError):
    pass


class NoGroundTruthError(MetricError):
    pass


class PlacementError(ValidationError):
    """Scene generation could not place every requested instance."""

    def __init__(self, message: str, placed: int, requested: int) -> None:
        super().__init__(message)
        self.placed = placed
        self.requested = requested


class ScoringError(CystsegError, RuntimeError):
    """A score-map provider failed to deliver maps for a tile."""


class RemoteScoringError(ScoringError):
    def __init__(self, message: str, attempts: int) -> None:
        super().__init__(message)
        self.attempts = attempts


class OutputExistsError(CystsegError):
    pass


class BatchError(CystsegError):
    """One or more images of a batch failed; ``failures`` maps stem -> error."""

    def __init__(self, failures: dict[str, BaseException]) -> None:
        lines = [f"{stem}: {exc}" for stem, exc in failures.items()]
        super().__init__(f"{len(failures)} image(s) failed:\n" + "\n".join(lines))
        self.failures = failures

    @property
    def validation_only(self) -> bool:
        return all(isinstance(e, ValidationError) for e in self.failures.values())
