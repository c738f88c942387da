"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class ACSSegError(Exception):
    exit_code = 1


class ConfigError(ACSSegError, ValueError):
    """Invalid configuration value(s). ``problems`` carries every violation found."""

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InputError(ACSSegError, ValueError):
    exit_code = 2


class WiringError(ACSSegError, RuntimeError):
    """Feature maps joined at incompatible strides or sizes."""

    exit_code = 4


class DataError(ACSSegError):
    exit_code = 3


class NumericError(ACSSegError, FloatingPointError):
    exit_code = 4


class CheckpointError(ACSSegError):
    exit_code = 5
