"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``NumericError`` -> 4.
"""


class HevError(Exception):
    pass


class ConfigError(HevError):
    pass


class DataError(HevError):
    pass


class NumericError(HevError):
    pass


class MalformedRow(DataError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class NonMonotonicTimestamp(DataError):
    def __init__(self, row: int, prev_t: int, t: int):
        super().__init__(f"row {row}: timestamp {t} < previous {prev_t}")
        self.row = row


class ReservedId(DataError):
    pass


class EmptySplit(ConfigError):
    pass


class QueryEventMismatch(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class StaleEvent(DataError):
    pass


class SequenceTooLong(ConfigError):
    pass


class NonFiniteActivation(NumericError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activation in layer {layer}")
        self.layer = layer


class NonFiniteGradient(NumericError):
    pass


class VersionMismatch(ConfigError):
    pass


class CorruptCheckpoint(DataError):
    pass
