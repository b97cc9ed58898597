import pytest

from adaptcast.model_zoo import ModelSpec, enumerate_models
from adaptcast.predicates import PredicateParseError, parse_predicate


def test_all_matches_everything():
    pred = parse_predicate("  ALL ")
    assert pred.clauses == ()
    assert len(pred.filter(enumerate_models())) == 552


def test_reduced_grid():
    pred = parse_predicate("group=0,2,8; w=48,96; p<=1; d=1; q<=1")
    specs = pred.filter(enumerate_models())
    assert len(specs) == 20
    assert {s.group for s in specs} == {0, 2, 8}


def test_in_and_inequalities():
    pred = parse_predicate("w in 12,24;q>0")
    assert pred.matches(ModelSpec(0, 12, 0, 1, 1))
    assert not pred.matches(ModelSpec(0, 12, 0, 1, 0))
    assert not pred.matches(ModelSpec(0, 48, 0, 1, 1))


def test_kind_clause():
    specs = parse_predicate("kind=multivariate").filter(enumerate_models())
    assert len(specs) == 48
    assert parse_predicate("kind != multivariate").matches(ModelSpec(3, 12, 1, 1, 1))


def test_not_equal_list():
    pred = parse_predicate("group!=0,1")
    assert not pred.matches(ModelSpec(1, 12, 0, 1, 0))
    assert pred.matches(ModelSpec(2, 12, 0, 1, 0))


def test_unknown_field():
    with pytest.raises(PredicateParseError):
        parse_predicate("lambda=0.9")


def test_non_integer_value():
    with pytest.raises(PredicateParseError):
        parse_predicate("w=forty")


def test_inequality_takes_one_value():
    with pytest.raises(PredicateParseError):
        parse_predicate("w<=12,24")


def test_kind_rejects_order_operators():
    with pytest.raises(PredicateParseError):
        parse_predicate("kind<univariate")
    with pytest.raises(PredicateParseError):
        parse_predicate("kind=bivariate")


def test_empty_predicate():
    with pytest.raises(PredicateParseError):
        parse_predicate("   ")
    with pytest.raises(PredicateParseError):
        parse_predicate(" ; ")
    with pytest.raises(PredicateParseError):
        parse_predicate("w=12,")
