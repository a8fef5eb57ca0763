"""Exception hierarchy.  The CLI maps these onto exit codes 2 (config), 3 (data) and 4 (divergence)."""


class AlpsError(Exception):
    pass


class ConfigError(AlpsError):
    pass


class DataError(AlpsError):
    pass


class ProtocolError(DataError):
    """The requested split or evaluation protocol cannot be satisfied by the data."""


class IngestionError(DataError):
    pass


class UndefinedMetricError(DataError, ValueError):
    """AUROC/EER requested on labels that contain a single class."""


class DivergenceError(AlpsError):
    pass
