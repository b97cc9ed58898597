import operator
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Union

from .common import AdaptcastError
from .model_zoo import ModelSpec


class PredicateParseError(AdaptcastError):
    """Raised when a string cannot be parsed as a model predicate."""


# One clause: field, operator, comma-separated values.
CLAUSE_RE = re.compile(r"^(group|w|p|d|q|kind)\s*(<=|>=|!=|=|<|>|\s+in\s+)\s*(.+)$")

_OPS: dict[str, Callable[[object, object], bool]] = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_KINDS = ("univariate", "multivariate")

Value = Union[int, str]


@dataclass(frozen=True)
class Clause:
    field: str
    op: str
    values: tuple[Value, ...]

    def matches(self, spec: ModelSpec) -> bool:
        actual = getattr(spec, self.field)
        if self.op in ("=", "in"):
            return actual in self.values
        if self.op == "!=":
            return actual not in self.values
        return _OPS[self.op](actual, self.values[0])


@dataclass(frozen=True)
class ModelPredicate:
    clauses: tuple[Clause, ...] = ()
    text: str = "all"

    def matches(self, spec: ModelSpec) -> bool:
        return all(c.matches(spec) for c in self.clauses)

    def filter(self, specs: Iterable[ModelSpec]) -> list[ModelSpec]:
        return [s for s in specs if self.matches(s)]


def _parse_clause(raw: str) -> Clause:
    match = CLAUSE_RE.match(raw)
    if not match:
        raise PredicateParseError(f"Invalid clause: {raw}")
    field, op, rest = match.group(1), match.group(2).strip(), match.group(3)
    parts = [v.strip() for v in rest.split(",")]
    if any(not v for v in parts):
        raise PredicateParseError(f"Empty value in clause: {raw}")
    if field == "kind":
        if op not in ("=", "!=", "in"):
            raise PredicateParseError(f"kind only supports =, != and in: {raw}")
        bad = [v for v in parts if v not in _KINDS]
        if bad:
            raise PredicateParseError(f"Unknown kind {bad[0]!r}")
        return Clause(field, op, tuple(parts))
    try:
        values = tuple(int(v) for v in parts)
    except ValueError:
        raise PredicateParseError(f"Non-integer value in clause: {raw}") from None
    if op in ("<", "<=", ">", ">=") and len(values) != 1:
        raise PredicateParseError(f"{op} takes a single value: {raw}")
    return Clause(field, op, values)


def parse_predicate(text: str) -> ModelPredicate:
    """
    Parse 'group=0,2,8; w=48,96; p<=1' style predicates; 'all' matches every model.
    """
    if text is None:
        raise PredicateParseError("No predicate to parse")
    raw = text.strip()
    if not raw:
        raise PredicateParseError("Empty predicate")
    if raw.lower() == "all":
        return ModelPredicate((), "all")
    clauses = tuple(_parse_clause(part.strip()) for part in raw.split(";") if part.strip())
    if not clauses:
        raise PredicateParseError(f"Empty predicate: {raw}")
    return ModelPredicate(clauses, raw)
