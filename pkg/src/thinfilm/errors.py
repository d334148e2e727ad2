"""Exception types shared by the solvers and the command line."""


class NumericalFailure(RuntimeError):
    """A solver could not honour its contract (positivity, convergence, blowup)."""

    def __init__(self, message: str, macro_step: int | None = None):
        self.reason = message
        self.macro_step = macro_step
        if macro_step is not None:
            message = f"macro step {macro_step}: {message}"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` and ``line`` locate the offending entry."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.message = message
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
