"""
Error hierarchy for the repair engine

Every failure that aborts an operation is a RepairError subclass with a
stable machine-readable ``code``. The CLI prints ``to_diagnostic()`` on
stderr and exits with status 1.

Search outcomes that are valid but miss the target (no progress, budget
exhausted, time limit, no pattern found) are NOT exceptions: they are
reported in-band through RepairResult.stop_reason.
"""

from typing import Any, Optional


class RepairError(Exception):
    """Base class for all engine errors"""

    code = "repair_error"

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_diagnostic(self) -> dict[str, Any]:
        """Machine-readable form for the diagnostics stream"""
        return {"code": self.code, "message": self.message, "details": self.details}


# === Ingestion / schema ===

class SchemaError(RepairError):
    code = "schema_error"


class IngestionError(RepairError):
    """The input file cannot be opened or decoded"""

    code = "unreadable_input"


class MissingColumn(RepairError):
    code = "missing_column"

    def __init__(self, column: str, path: Optional[str] = None):
        super().__init__(
            f"Column '{column}' not found" + (f" in {path}" if path else ""),
            {"column": column, "path": path},
        )


class RaggedRow(RepairError):
    code = "ragged_row"

    def __init__(self, row: int, expected: int, found: int):
        super().__init__(
            f"Row {row} has {found} fields, expected {expected}",
            {"row": row, "expected": expected, "found": found},
        )


class UnparseableValue(RepairError):
    code = "unparseable_value"

    def __init__(self, row: int, column: str, value: str, kind: str):
        super().__init__(
            f"Cannot parse {value!r} as {kind} at row {row}, column '{column}'",
            {"row": row, "column": column, "value": value, "kind": kind},
        )


class UnknownAttribute(RepairError):
    code = "unknown_attribute"

    def __init__(self, attribute: str):
        super().__init__(f"Unknown attribute '{attribute}'", {"attribute": attribute})


class QueryError(RepairError):
    code = "invalid_query"


class ConfigError(RepairError):
    code = "config_error"


# === Dataset ===

class AlreadyDeleted(RepairError):
    code = "already_deleted"

    def __init__(self, tuple_id: int):
        super().__init__(f"Tuple {tuple_id} is not alive", {"id": tuple_id})


# === Estimators ===

class RankDeficient(RepairError):
    code = "rank_deficient"


class DegenerateGroups(RepairError):
    code = "degenerate_groups"


class SingularCapacitance(RepairError):
    code = "singular_capacitance"


class RankLost(RepairError):
    code = "rank_lost"


class NormTooLarge(RepairError):
    code = "norm_too_large"


class Separation(RepairError):
    code = "separation"


class EmptyGroup(RepairError):
    code = "empty_group"


class SingularFisher(RepairError):
    code = "singular_fisher"


# === Search ===

class InfluenceUnavailable(RepairError):
    code = "influence_unavailable"


class EmptyPattern(RepairError):
    code = "empty_pattern"


class NoEligibleAttributes(RepairError):
    code = "no_eligible_attributes"


# === Oracles ===

class InstanceTooLarge(RepairError):
    code = "instance_too_large"


class PatternSpaceTooLarge(RepairError):
    code = "pattern_space_too_large"


__all__ = [
    "RepairError",
    "SchemaError",
    "IngestionError",
    "MissingColumn",
    "RaggedRow",
    "UnparseableValue",
    "UnknownAttribute",
    "QueryError",
    "ConfigError",
    "AlreadyDeleted",
    "RankDeficient",
    "DegenerateGroups",
    "SingularCapacitance",
    "RankLost",
    "NormTooLarge",
    "Separation",
    "EmptyGroup",
    "SingularFisher",
    "InfluenceUnavailable",
    "EmptyPattern",
    "NoEligibleAttributes",
    "InstanceTooLarge",
    "PatternSpaceTooLarge",
]
