"""Is a model subclass selected more often than chance?

Given a reference class ``H0`` and a strict subclass ``H1``, the counts of
selections falling in ``H1`` (``n1``) and in ``H0 \\ H1`` (``n0``) over a
period give a Bayes factor under a counting prior and a one-sided exact
binomial p-value. Selections outside ``H0`` and random-walk fallbacks are
left out of both counts and of the trial count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import numpy as np
import pandas as pd
from scipy.stats import binom

from .common import QueryError, UndefinedStatisticError, ValidationError
from .model_zoo import ModelSpec
from .predicates import ModelPredicate, parse_predicate

logger = logging.getLogger(__name__)

TEST_COLUMNS = ("period_start", "period_end", "n", "n1", "n0", "bayes_factor", "p_value", "warning")
DEPENDENCE_WARNING = "dependent-selections"

__all__ = [
    "ClassQuery",
    "TestResult",
    "count_selections",
    "bayes_factor",
    "bayes_factor_from_counts",
    "binomial_test",
    "binomial_pvalue",
    "evaluate_period",
    "rolling_tests",
    "results_frame",
]


class _Selection(Protocol):
    t: int
    spec: ModelSpec | None


@dataclass(frozen=True)
class ClassQuery:
    """``H1`` strictly inside ``H0``, both resolved against a model universe."""

    h1: frozenset[ModelSpec]
    h0: frozenset[ModelSpec]
    h1_text: str = ""
    h0_text: str = "all"

    def __post_init__(self) -> None:
        if not self.h1:
            raise QueryError(f"H1 '{self.h1_text}' selects no model")
        if not self.h1 < self.h0:
            raise QueryError(f"H1 '{self.h1_text}' is not a strict subset of H0 '{self.h0_text}'")

    @classmethod
    def from_predicates(
        cls, h1: ModelPredicate | str, h0: ModelPredicate | str, universe: Iterable[ModelSpec]
    ) -> "ClassQuery":
        p1 = parse_predicate(h1) if isinstance(h1, str) else h1
        p0 = parse_predicate(h0) if isinstance(h0, str) else h0
        specs = list(universe)
        return cls(frozenset(p1.filter(specs)), frozenset(p0.filter(specs)), p1.text, p0.text)

    @property
    def size1(self) -> int:
        return len(self.h1)

    @property
    def size_rest(self) -> int:
        return len(self.h0) - len(self.h1)

    @property
    def p0(self) -> float:
        return len(self.h1) / len(self.h0)


@dataclass(frozen=True, slots=True)
class TestResult:
    __test__ = False

    period_start: int
    period_end: int
    n: int
    n1: int
    n0: int
    bayes_factor: float
    p_value: float
    warning: str = ""


def count_selections(query: ClassQuery, selections: Iterable[_Selection]) -> tuple[int, int, int]:
    """``(n1, n0, excluded)`` where *excluded* counts fallbacks and selections outside ``H0``."""
    n1 = n0 = excluded = 0
    for sel in selections:
        if sel.spec is None or sel.spec not in query.h0:
            excluded += 1
        elif sel.spec in query.h1:
            n1 += 1
        else:
            n0 += 1
    return n1, n0, excluded


def bayes_factor_from_counts(n1: int, n0: int, size1: int, size_rest: int) -> float:
    if size1 <= 0 or size_rest <= 0:
        raise QueryError("both H1 and H0 \\ H1 must be non-empty")
    if n1 == 0 and n0 == 0:
        raise UndefinedStatisticError("Bayes factor undefined without selections in H0")
    if n0 == 0:
        return math.inf
    return (size_rest / size1) * (n1 / n0)


def bayes_factor(query: ClassQuery, selections: Iterable[_Selection]) -> float:
    n1, n0, _ = count_selections(query, selections)
    return bayes_factor_from_counts(n1, n0, query.size1, query.size_rest)


def binomial_pvalue(n1: int, n: int, p0: float) -> float:
    """Upper-tail probability ``P(X >= n1)`` for ``X ~ Bin(n, p0)``."""
    if not 0 <= n1 <= n:
        raise ValidationError(f"n1={n1} outside [0, {n}]")
    if not 0.0 < p0 < 1.0:
        raise ValidationError(f"null probability must lie in (0, 1), got {p0}")
    return float(min(1.0, max(0.0, binom.sf(n1 - 1, n, p0))))


def binomial_test(query: ClassQuery, selections: Iterable[_Selection]) -> float:
    n1, n0, _ = count_selections(query, selections)
    return binomial_pvalue(n1, n1 + n0, query.p0)


def evaluate_period(query: ClassQuery, block: Sequence[_Selection], dependent: bool = False) -> TestResult:
    """Both tests on one period; undefined statistics become NaN with a warning."""
    n1, n0, excluded = count_selections(query, block)
    warnings = []
    if dependent:
        warnings.append(DEPENDENCE_WARNING)
    if excluded:
        warnings.append(f"excluded={excluded}")
    try:
        bf = bayes_factor_from_counts(n1, n0, query.size1, query.size_rest)
    except UndefinedStatisticError:
        bf = np.nan
        warnings.append("undefined-bayes-factor")
    p_value = binomial_pvalue(n1, n1 + n0, query.p0) if n1 + n0 else np.nan
    return TestResult(
        period_start=int(block[0].t),
        period_end=int(block[-1].t),
        n=n1 + n0,
        n1=n1,
        n0=n0,
        bayes_factor=bf,
        p_value=p_value,
        warning="|".join(warnings),
    )


def rolling_tests(
    query: ClassQuery,
    selections: Sequence[_Selection],
    period_length: int,
    *,
    dependent: bool = False,
) -> list[TestResult]:
    """One result per consecutive, non-overlapping block of *period_length* selections.

    A trailing partial block is dropped. Pass ``dependent=True`` for selections
    from a switching-penalised selector, whose picks are not independent.
    """
    if period_length < 1:
        raise ValidationError("period length must be positive")
    n_blocks = len(selections) // period_length
    if n_blocks == 0:
        logger.warning("%d selections do not fill one period of %d", len(selections), period_length)
    dropped = len(selections) - n_blocks * period_length
    if dropped and n_blocks:
        logger.info("Dropping %d trailing selections that do not fill a period", dropped)
    return [
        evaluate_period(query, selections[i * period_length : (i + 1) * period_length], dependent)
        for i in range(n_blocks)
    ]


def results_frame(results: Iterable[TestResult]) -> pd.DataFrame:
    frame = pd.DataFrame([_row(r) for r in results], columns=list(TEST_COLUMNS))
    return frame


def _row(result: TestResult) -> dict[str, object]:
    return {name: getattr(result, name) for name in TEST_COLUMNS}
