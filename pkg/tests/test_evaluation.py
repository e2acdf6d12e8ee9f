from __future__ import annotations

from fractions import Fraction

import pytest
from conftest import FIXTURES, run_fixture

from wmalign.evaluation import (
    Constraint,
    EpisodeOutcome,
    EvalSpec,
    EvalSpecError,
    FirstSatisfaction,
    Proposition,
    evaluate,
    load_eval_spec,
    paired_deltas,
    score,
)

P = Proposition


def two(cons=()):
    return EvalSpec((P("is_on", ("a_1", "t_0")), P("is_clean", ("b_1",))), cons)


def test_proposition_arity_and_predicates():
    with pytest.raises(EvalSpecError, match="takes 2"):
        P("is_on", ("a_1",))
    with pytest.raises(EvalSpecError, match="takes 1"):
        P("is_clean", ("a_1", "b_1"))
    with pytest.raises(EvalSpecError, match="unknown predicate"):
        P("is_shiny", ("a_1",))


def test_next_to_is_symmetric():
    p = P("is_next_to", ("a_1", "b_1"))
    assert p.holds({("is_next_to", "b_1", "a_1")})
    assert not P("is_on", ("a_1", "b_1")).holds({("is_on", "b_1", "a_1")})


def test_spec_validation():
    with pytest.raises(EvalSpecError, match="at least one"):
        EvalSpec(())
    with pytest.raises(EvalSpecError, match="distinct"):
        two((Constraint("before", (0, 0)),))
    with pytest.raises(EvalSpecError, match="distinct"):
        two((Constraint("before", (0, 5)),))
    with pytest.raises(EvalSpecError, match="unsupported"):
        two((Constraint("after", (0, 1)),))
    with pytest.raises(EvalSpecError, match="malformed"):
        EvalSpec.from_document({"propositions": [{"args": []}]})


def test_document_round_trip():
    spec = load_eval_spec(FIXTURES / "tasks" / "two_room.json")
    assert EvalSpec.from_document(spec.to_document()) == spec


@pytest.mark.parametrize(
    "tau, complete, pc, sr",
    [
        ((3, 5), (True, True), Fraction(1), 1),
        ((5, 5), (True, True), Fraction(1), 1),
        ((5, 3), (True, False), Fraction(1, 2), 0),
        ((None, 3), (False, False), Fraction(0), 0),
        ((3, None), (True, False), Fraction(1, 2), 0),
    ],
)
def test_before_gates_only_the_later_proposition(tau, complete, pc, sr):
    r = score(two((Constraint("before", (0, 1)),)), tau)
    assert (r.complete, r.pc, r.sr) == (complete, pc, sr)


def test_unconstrained_scoring():
    r = score(two(), (None, 2))
    assert r.complete == (False, True) and r.pc == Fraction(1, 2)


def test_first_satisfaction_keeps_earliest():
    fs = FirstSatisfaction(two())
    fs.observe(1, {("is_clean", "b_1")})
    fs.observe(2, set())
    fs.observe(4, {("is_clean", "b_1"), ("is_on", "a_1", "t_0")})
    assert fs.tau == [4, 1]


def test_evaluate_replays_trace():
    tr = run_fixture("two_room", "two_room", ["silent_explorer", "silent_explorer"], "silent")
    r = evaluate(tr)
    assert r.sr == 1 and all(t is not None for t in r.tau)


def test_evaluate_rejects_foreign_handles():
    tr = run_fixture("two_room", "two_room", ["silent_explorer", "silent_explorer"], "silent")
    with pytest.raises(EvalSpecError, match="absent"):
        evaluate(tr, EvalSpec((P("is_clean", ("ghost_1",)),)))


def outcomes(*rows):
    return [EpisodeOutcome(*r) for r in rows]


def test_paired_deltas_intersection_and_symmetry():
    a = outcomes(("e0", 1, 1.0, 0.0), ("e1", 0, 0.5, None), ("e2", 1, 1.0, 0.5, "stalled"))
    b = outcomes(("e0", 0, 0.5, 0.5), ("e1", 0, 0.0, 0.25), ("e3", 1, 1.0, 0.0))
    ab, ba = paired_deltas(a, b), paired_deltas(b, a)
    assert ab.episode_ids == ("e0", "e1") and ab.n == 2
    assert ab.delta_sr == pytest.approx(0.5) and ab.delta_pc == pytest.approx(0.5)
    assert ab.delta_r_conf == pytest.approx(-0.5)  # only e0 has a rate on both sides
    assert (ba.delta_sr, ba.delta_pc, ba.delta_r_conf) == (-ab.delta_sr, -ab.delta_pc, -ab.delta_r_conf)


def test_paired_deltas_empty():
    d = paired_deltas(outcomes(("e0", 1, 1.0, None)), outcomes(("e1", 1, 1.0, None)))
    assert not d.defined and d.delta_sr is None and d.delta_r_conf is None
