# Exception hierarchy. Every class knows the exit code the CLI reports for it.


class GMFlowError(Exception):
    exit_code = 1


class InvalidArgumentError(GMFlowError, ValueError):
    pass


class DomainError(GMFlowError, ValueError):
    pass


class UnsupportedSizeError(GMFlowError):
    pass


class UnsupportedConfigurationError(GMFlowError):
    pass


class ConfigParseError(GMFlowError):
    def __init__(self, path, line: int, column: int, problem: str):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}:{column}: {problem}")


class ConfigValidationError(GMFlowError):
    def __init__(self, field_name: str, problem: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {problem}")


class GraphFormatError(GMFlowError, ValueError):
    pass


class SelfCheckFailure(GMFlowError):
    exit_code = 2


IO_EXIT_CODE = 3
