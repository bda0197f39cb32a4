class SmaqException(Exception):
    pass


class ParameterError(SmaqException, ValueError):
    """An argument violates a documented bound."""


class IntegrityError(SmaqException):
    """AEAD tag verification failed."""


class KeyScheduleError(SmaqException):
    """Unrecoverable key schedule condition (e.g. key phase exhaustion)."""


class StateNotReady(SmaqException):
    """SMAQ state requested before the connection keys are established."""


class StateFormatError(SmaqException, ValueError):
    pass


class StreamClosedError(ParameterError):
    pass


class ConfigError(SmaqException, ValueError):
    pass
