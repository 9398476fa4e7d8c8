"""Exception types shared across the package."""


class FlowAdvError(Exception):
    """Base class for all flowadv errors."""


class SchemaError(FlowAdvError):
    """Schema definition is invalid, or data does not match the schema."""


class DataError(FlowAdvError):
    """Input data cannot be used (missing file, bad shape, degenerate split)."""


class ConfigError(FlowAdvError):
    """A plan, attack config, or generator parameter set is invalid."""


class TrainingError(FlowAdvError):
    """Training input is degenerate (e.g. a single class)."""


class StatsError(FlowAdvError):
    """Traffic statistics requested over an empty set."""


class FusionError(FlowAdvError):
    """Detector fusion called with unusable probabilities or weights."""
