"""
Domain schemas for the repair engine

Pydantic v2 models for everything that crosses a module or process
boundary: the table schema, the causal query, conjunctive patterns, and
the RepairResult report (serialized as JSON by the CLI).

Numeric estimator states are plain frozen dataclasses and live next to
their estimators (src/estimators/).
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_serializer, model_validator

from src.utils.errors import QueryError, SchemaError, UnknownAttribute


AttributeKind = Literal["categorical", "numeric-continuous", "numeric-binary"]
PatternValue = Union[int, str]
StopReason = Literal[
    "hit",
    "already_in_range",
    "no_progress",
    "budget_exhausted",
    "time_limit",
    "no_solution",
    "infeasible",
]


class Attribute(BaseModel):
    """One column of the table"""
    model_config = ConfigDict(frozen=True)

    name: str
    kind: AttributeKind


class Schema(BaseModel):
    """Ordered attribute list A1..Am"""
    model_config = ConfigDict(frozen=True)

    attributes: tuple[Attribute, ...] = ()

    @model_validator(mode="after")
    def _unique_names(self) -> Schema:
        names = [a.name for a in self.attributes]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise SchemaError(f"Duplicate attribute names: {duplicates}", {"names": duplicates})
        return self

    @classmethod
    def of(cls, kinds: Mapping[str, AttributeKind]) -> Schema:
        return cls(attributes=tuple(Attribute(name=n, kind=k) for n, k in kinds.items()))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __contains__(self, name: object) -> bool:
        return any(a.name == name for a in self.attributes)

    def kind_of(self, name: str) -> AttributeKind:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute.kind
        raise UnknownAttribute(name)

    def require(self, names: Iterable[str]) -> None:
        for name in names:
            if name not in self:
                raise UnknownAttribute(name)


class CausalQuery(BaseModel):
    """
    Treatment T, outcome O, confounders Z and the target interval
    [target - epsilon, target + epsilon] for the repaired ATE.

    epsilon may be 0 (exact targeting); hit checks add a small absolute
    tolerance to absorb floating-point round-off.
    """
    model_config = ConfigDict(frozen=True)

    treatment: str
    outcome: str
    confounders: tuple[str, ...] = ()
    target: float
    epsilon: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _roles_disjoint(self) -> CausalQuery:
        if self.treatment == self.outcome:
            raise QueryError("Treatment and outcome must differ", {"attribute": self.treatment})
        for role, name in (("treatment", self.treatment), ("outcome", self.outcome)):
            if name in self.confounders:
                raise QueryError(
                    f"The {role} '{name}' cannot also be a confounder",
                    {"attribute": name, "role": role},
                )
        if len(set(self.confounders)) != len(self.confounders):
            raise QueryError("Confounders must be distinct", {"confounders": list(self.confounders)})
        return self

    @property
    def lower(self) -> float:
        return self.target - self.epsilon

    @property
    def upper(self) -> float:
        return self.target + self.epsilon

    def contains(self, ate: Optional[float], tolerance: float = 1e-9) -> bool:
        """True when ate lies in the target interval (with absolute slack)"""
        if ate is None:
            return False
        return abs(ate - self.target) <= self.epsilon + tolerance

    def direction(self, ate: float) -> int:
        """d = sign(ATE_d - ATE)"""
        if ate < self.target:
            return 1
        if ate > self.target:
            return -1
        return 0

    def validate_against(self, schema: Schema) -> None:
        """Every referenced attribute must exist; the outcome must be numeric"""
        schema.require([self.treatment, self.outcome, *self.confounders])
        if schema.kind_of(self.outcome) == "categorical":
            raise QueryError(
                f"Outcome '{self.outcome}' must be numeric",
                {"attribute": self.outcome},
            )
        if schema.kind_of(self.treatment) == "categorical":
            raise QueryError(
                f"Treatment '{self.treatment}' must be a 0/1 column",
                {"attribute": self.treatment},
            )


def _scalar(value: Any) -> PatternValue:
    """Normalize numpy scalars / bools to plain int or str"""
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, (int, str)):
        return value
    return str(value)


class Pattern(BaseModel):
    """
    Conjunction of attribute=value equality predicates.

    Predicates are kept sorted by attribute, so two patterns with the same
    predicates compare and hash equal. Serialized as a list of
    {"attribute": ..., "value": ...} objects.
    """
    model_config = ConfigDict(frozen=True)

    predicates: tuple[tuple[str, PatternValue], ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _accept_list_form(cls, data: Any) -> Any:
        if isinstance(data, list):
            data = {"predicates": [(item["attribute"], item["value"]) for item in data]}
        if isinstance(data, dict) and "predicates" in data:
            pairs = [(str(a), _scalar(v)) for a, v in data["predicates"]]
            data = {"predicates": tuple(sorted(pairs, key=lambda p: p[0]))}
        return data

    @model_validator(mode="after")
    def _one_predicate_per_attribute(self) -> Pattern:
        attributes = [a for a, _ in self.predicates]
        if len(set(attributes)) != len(attributes):
            raise SchemaError(
                "A pattern may hold at most one predicate per attribute",
                {"attributes": attributes},
            )
        return self

    @model_serializer(mode="plain")
    def _as_list(self) -> list[dict[str, PatternValue]]:
        return [{"attribute": a, "value": v} for a, v in self.predicates]

    @classmethod
    def of(cls, assignment: Mapping[str, Any]) -> Pattern:
        return cls(predicates=tuple(assignment.items()))  # type: ignore[arg-type]

    @property
    def attributes(self) -> list[str]:
        return [a for a, _ in self.predicates]

    def __len__(self) -> int:
        return len(self.predicates)

    def without(self, attribute: str) -> Pattern:
        """Parent pattern: the same conjunction minus one predicate"""
        return Pattern(predicates=tuple(p for p in self.predicates if p[0] != attribute))

    def sort_key(self) -> tuple[tuple[str, str], ...]:
        """Lexicographic order used for deterministic tie-breaking"""
        return tuple((a, str(v)) for a, v in self.predicates)

    def validate_for(self, query: CausalQuery, schema: Schema, allow_treatment: bool = False) -> None:
        schema.require(self.attributes)
        if query.outcome in self.attributes:
            raise QueryError("Patterns cannot reference the outcome", {"attribute": query.outcome})
        if not allow_treatment and query.treatment in self.attributes:
            raise QueryError("Patterns cannot reference the treatment", {"attribute": query.treatment})

    def __str__(self) -> str:
        if not self.predicates:
            return "<all>"
        return " AND ".join(f"{a}={v}" for a, v in self.predicates)


class TraceEntry(BaseModel):
    """One step of a search: the ATE reached and what was done"""
    iteration: int
    ate: Optional[float]
    action: str
    removed: int = 0


class RepairResult(BaseModel):
    """
    Report of one repair run (tuple or pattern mode).

    hit_range is always derived from ate_after, which is computed by a full
    refit on the repaired data (no incremental updates).

    applied=False marks a pattern miss: `pattern` is the closest one found,
    its tuples were left in place, and ate_after is what deleting them would
    give. Such a result never hits, even when ate_after is inside the
    interval, as when the pattern exceeds the support limit on the full data.
    """
    mode: Literal["tuple", "pattern"]
    removed_ids: Optional[list[int]] = None
    pattern: Optional[Pattern] = None
    removed_count: int
    removed_fraction: float
    ate_before: float
    ate_after: float
    hit_range: bool
    trace: list[TraceEntry] = Field(default_factory=list)
    wall_time: float
    stop_reason: StopReason
    query: Optional[CausalQuery] = None
    applied: bool = True

    @model_validator(mode="after")
    def _hit_needs_applied(self) -> RepairResult:
        if self.hit_range and not self.applied:
            raise SchemaError("A repair that was not applied cannot hit the target", {"mode": self.mode})
        return self

    @property
    def shift_percent(self) -> float:
        """|ate_after - ate_before| / |ate_before| in percent (may exceed 100)"""
        if self.ate_before == 0:
            return 0.0 if self.ate_after == 0 else float("inf")
        return abs(self.ate_after - self.ate_before) / abs(self.ate_before) * 100.0

    @property
    def shift_arrow(self) -> str:
        if self.ate_after > self.ate_before:
            return "↑"
        if self.ate_after < self.ate_before:
            return "↓"
        return "="


__all__ = [
    "AttributeKind",
    "PatternValue",
    "StopReason",
    "Attribute",
    "Schema",
    "CausalQuery",
    "Pattern",
    "TraceEntry",
    "RepairResult",
]
