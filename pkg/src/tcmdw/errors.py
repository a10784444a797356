"""Exception taxonomy.

Every error carries ``exit_code`` so the CLI can map failures onto its
status codes: 1 for validation/data problems, 2 for environment and I/O
problems. Usage errors (3) are raised by the argument parser itself.
"""


class TcmdwError(Exception):
    exit_code = 1


class DataError(TcmdwError):
    exit_code = 1


class EnvironmentFailure(TcmdwError):
    exit_code = 2


# -- schema ---------------------------------------------------------------

class SchemaSyntaxError(DataError):
    """Malformed schema document. ``line``/``column`` are 1-based when known."""

    def __init__(self, message, *, path="$", line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = path
        if line is not None:
            where = f"{path} (line {line}, column {column})"
        super().__init__(f"{message} at {where}")


class DuplicateName(SchemaSyntaxError):
    pass


class MissingSection(SchemaSyntaxError):
    pass


class InvalidSchema(DataError):
    def __init__(self, report):
        self.report = report
        errors = [i for i in report.issues if i.severity == "error"]
        super().__init__(
            f"schema has {len(errors)} error(s): "
            + "; ".join(f"{i.code} at {i.location}" for i in errors[:5])
        )


# -- storage --------------------------------------------------------------

class PathNotEmpty(EnvironmentFailure):
    pass


class CorruptManifest(EnvironmentFailure):
    pass


class DigestMismatch(EnvironmentFailure):
    pass


class WarehouseLocked(EnvironmentFailure):
    pass


class UnknownTable(DataError):
    pass


class MissingAttribute(DataError):
    pass


class UnknownAttribute(DataError):
    pass


class StaleWarehouse(DataError):
    pass


class ReadOnlyWarehouse(DataError):
    pass


# -- query / cube ---------------------------------------------------------

class UnknownLevel(DataError):
    pass


class UnknownMeasure(DataError):
    pass


class AtApex(DataError):
    pass


class AtBase(DataError):
    pass


class AmbiguousHierarchy(DataError):
    pass


class InvalidQuery(DataError):
    pass


# -- etl / datagen --------------------------------------------------------

class SourceUnreadable(EnvironmentFailure):
    pass


class HeaderMismatch(DataError):
    pass


class ConfigInvalid(DataError):
    pass


class RuleError(DataError):
    """A rule set is statically invalid for the fields it will see."""


class InvalidConfig(DataError):
    pass


# -- metadata / report ----------------------------------------------------

class DuplicateBatch(DataError):
    pass


class NotFound(DataError):
    pass


class UnknownReport(DataError):
    pass


class MissingParam(DataError):
    pass


class StaleCube(DataError):
    pass
