"""Exception types shared across the package."""


class SplinetError(Exception):
    pass


class ShapeError(SplinetError, ValueError):
    pass


class ConfigError(SplinetError, ValueError):
    pass


class DomainError(SplinetError, ValueError):
    pass


class ConsistencyError(SplinetError, ValueError):
    pass


class FormatError(SplinetError, ValueError):
    pass


class SchemaError(SplinetError, ValueError):
    pass
