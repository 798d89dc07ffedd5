"""Exception hierarchy shared by every module of the package."""


class VQAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VQAError, ValueError):
    pass


class NonFiniteError(VQAError, ValueError):
    pass


class EmptySupportError(VQAError, ValueError):
    """Raised when a masked softmax has no valid entry to put mass on."""


class VocabularyError(VQAError, KeyError):
    def __str__(self):  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class DistributionError(VQAError, ValueError):
    pass


class ContractError(VQAError, RuntimeError):
    pass


class GrammarError(VQAError, ValueError):
    pass


class TaxonomyError(VQAError, ValueError):
    pass


class ConfigError(VQAError, ValueError):
    pass


class InfeasibleSpecError(VQAError, ValueError):
    pass


class ParseError(VQAError, ValueError):
    """A malformed line in one of the text/JSONL input formats."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
