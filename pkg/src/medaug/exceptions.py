"""Exception hierarchy shared by every stage of the pipeline."""


class MedAugError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MedAugError, ValueError):
    exit_code = 2


class DataError(MedAugError, ValueError):
    """Input records, hierarchy files or stage artifacts are unusable."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(DataError):
    pass


class CoverageError(DataError):
    """Some codes have no entry in a required table or hierarchy."""

    def __init__(self, message, missing=()):
        self.missing = list(missing)
        if self.missing:
            shown = ", ".join(map(str, self.missing[:20]))
            if len(self.missing) > 20:
                shown += f", ... ({len(self.missing)} total)"
            message = f"{message}: {shown}"
        super().__init__(message)


class StructureError(DataError):
    """Graph structure violates an invariant (cycle, orphan, ...)."""


class MissingArtifactError(DataError):
    def __init__(self, path, producer):
        self.path = path
        self.producer = producer
        super().__init__(f"missing artifact {path}; run `medaug {producer}` first")


class DimensionError(MedAugError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        shown = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")


class ContractError(MedAugError, ValueError):
    """A documented precondition of an operation was violated."""


class TrainingError(MedAugError, FloatingPointError):
    exit_code = 4


class UnknownCodeError(DataError, LookupError):
    pass
