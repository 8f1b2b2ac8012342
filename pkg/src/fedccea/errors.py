"""Exception types shared across the package."""


class FormatError(ValueError):
    """An external file (IDX images/labels, simulation store) is malformed."""


class ConsistencyError(ValueError):
    """Two inputs that must agree do not (e.g. image/label counts, store coverage)."""


class CapacityError(ValueError):
    """A request exceeds what the data or the algorithm can supply."""


class DegenerateRoundError(ValueError):
    """Every client sampled a zero data size; there is nothing to aggregate."""


class ConfigError(ValueError):
    """A configuration document is invalid; the message names the offending key."""


class DependencyError(RuntimeError):
    """A pipeline stage is missing an artifact a previous stage should have written."""
