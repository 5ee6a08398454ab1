"""Exception types raised across the package."""


class SRDefenseError(Exception):
    pass


class ChannelError(SRDefenseError, ValueError):
    pass


class ShapeError(SRDefenseError, ValueError):
    pass


class ConfigError(SRDefenseError, ValueError):
    pass


class IntegrityError(SRDefenseError):
    """Dataset archive failed checksum verification."""


class SchemaError(SRDefenseError):
    """Record file written by an incompatible schema version."""


class DecodeError(SRDefenseError):
    pass


class TrainingError(SRDefenseError, RuntimeError):
    """Training diverged (non-finite loss)."""


class SizeError(SRDefenseError, ValueError):
    pass
