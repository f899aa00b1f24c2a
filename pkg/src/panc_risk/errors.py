"""Exception hierarchy; the CLI maps each class to an exit code."""


class PancRiskError(Exception):
    exit_code = 1


class ConfigError(PancRiskError):
    exit_code = 2


class DataError(PancRiskError):
    exit_code = 3


class NumericError(PancRiskError):
    exit_code = 4
