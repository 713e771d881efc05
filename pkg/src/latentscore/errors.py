"""Shared exception types. The CLI maps these onto exit codes."""


class ConfigError(ValueError):
    """Invalid configuration value or incompatible component settings."""


class DataError(ValueError):
    """Malformed or inconsistent on-disk data (manifests, containers)."""


class ValidationError(ValueError):
    """Input failed schema validation; `field` names the offender."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class GenerationError(RuntimeError):
    """Generation produced an unusable patch; `patch_index` is 1-based."""

    def __init__(self, message: str, patch_index: int):
        super().__init__(message)
        self.patch_index = patch_index
