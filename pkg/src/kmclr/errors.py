"""Exception hierarchy.

Every error carries a short machine-readable ``kind`` so the CLI can print a
single parseable line and pick an exit code.
"""


class KmclrError(Exception):
    kind = "KmclrError"


class ParseError(KmclrError, ValueError):
    kind = "ParseError"

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line
        self.path = path


class SchemaError(KmclrError, ValueError):
    kind = "SchemaError"


class EmptyInputError(KmclrError, ValueError):
    kind = "EmptyInputError"


class LinkError(KmclrError, ValueError):
    kind = "LinkError"


class SplitError(KmclrError, ValueError):
    kind = "SplitError"


class ConfigError(KmclrError, ValueError):
    kind = "ConfigError"


class DimensionError(KmclrError, ValueError):
    kind = "DimensionError"


class ContractError(KmclrError, ValueError):
    kind = "ContractError"


class EncoderError(KmclrError, ValueError):
    kind = "EncoderError"


class SamplerError(KmclrError, RuntimeError):
    kind = "SamplerError"


class NonFiniteError(KmclrError, FloatingPointError):
    kind = "NonFiniteError"


class DivergenceError(KmclrError, FloatingPointError):
    kind = "DivergenceError"


class CheckpointError(KmclrError, ValueError):
    kind = "CheckpointError"


class RelationLookupError(KmclrError, LookupError):
    kind = "RelationLookupError"


class UsageError(KmclrError, ValueError):
    kind = "UsageError"
