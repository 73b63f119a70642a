"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for malformed arguments (shape mismatches,
non-odd window sizes, out-of-range labels). The classes below mark domain
failures that callers may want to catch and handle per-entry instead of
aborting a whole run.
"""


class ThbenchError(Exception):
    """Base class for toolkit-specific failures."""


class DegenerateFaceError(ThbenchError):
    """Face region too small to crop meaningfully."""


class OutOfFrameError(ThbenchError):
    """Requested crop rectangle has no overlap with the image."""


class DegenerateGeometryError(ThbenchError):
    """Landmark geometry is rank-deficient or collapsed (zero eye width,
    collinear point cloud, ...)."""


class InsufficientSamplesError(ThbenchError):
    """Not enough samples for the requested statistic (e.g. covariance)."""


class ProviderLoadError(ThbenchError):
    """Embedding-provider model artifact is missing or unreadable."""


class ProviderFaultError(ThbenchError):
    """Embedding provider produced invalid (non-finite) output."""


class DegenerateFeatureError(ThbenchError):
    """A feature vector has zero norm where a direction is required."""


class PairingError(ThbenchError):
    """Paired inputs are inconsistent (length mismatch, features from
    different checkpoints)."""


class TrainingFault(ThbenchError):
    """Training diverged. Carries the last checkpoint that was still finite."""

    def __init__(self, message: str, last_good_checkpoint=None):
        super().__init__(message)
        self.last_good_checkpoint = last_good_checkpoint


class ConfigurationError(ThbenchError):
    """Run configuration is inconsistent (e.g. a metric is enabled but its
    checkpoint is missing). Raised before any work starts."""
