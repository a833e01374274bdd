class DomainError(ValueError):
    """An operation was called outside its precondition."""


class ConfigError(ValueError):
    """A scenario or fault event refers to something that cannot exist.

    ``problems`` holds ``(key_path, line, message)`` triples; ``line`` is
    ``None`` when the value did not come from a file.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", None, problems)]
        self.problems = list(problems)
        super().__init__("; ".join(_fmt(p) for p in self.problems))


def _fmt(problem) -> str:
    key, line, msg = problem
    where = key or "<scenario>"
    if line is not None:
        where = f"{where} (line {line})"
    return f"{where}: {msg}"


class InvariantViolation(AssertionError):
    """A debug-mode invariant sweep found an inconsistent simulation state."""


class TraceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        self.lineno = lineno
        super().__init__(f"trace line {lineno}: {msg}")
