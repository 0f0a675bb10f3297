class InvariantError(ValueError):
    """A domain object or argument violates a stated invariant."""


class ScenarioParseError(ValueError):
    """A scenario or configuration file could not be parsed."""


class DegenerateInputError(ValueError):
    """The input carries no usable signal for the requested operation."""
