"""Contract models: validation, automaton stepping, compilation, repository."""
import copy
import itertools
import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, assume, given, settings, strategies as st

from contractengine import canonical
from contractengine.contract import (
    AmbiguousTransition,
    DanglingReference,
    DeterminismError,
    MissingObservation,
    SchemaError,
    UnknownState,
    append_instance_line,
    compile_model,
    derive_semi_template,
    load_entry,
    step_dfa,
    store_model,
    validate_model,
)
from contractengine.dht import DhtStore, UnknownKey
from contractengine.predicates import Comparison

BUILDING = json.loads((Path(__file__).parent.parent / "scenarios" / "building.scn").read_text())["models"]["building"]


def minimal(*triggers):
    return {
        "name": "minimal",
        "parameters": [{"name": "x", "source": "onchain", "type": "integer"}],
        "states": [{"id": "init", "initial": True}, {"id": "done", "terminal": True}],
        "transitions": [{"from": "init", "to": "done", "trigger": [t], "rules": ["go"]} for t in triggers],
        "rules": {"go": {"action": "create_transaction", "template": {"name": "pay", "amount": 1}}},
    }


def test_minimal_model_valid():
    model = validate_model(minimal({"param": "x", "op": ">=", "value": 10}))
    assert model.initial_state == "init"
    assert model.terminal_states == {"done"}


def test_overlapping_triggers_rejected():
    with pytest.raises(DeterminismError):
        validate_model(minimal({"param": "x", "op": ">=", "value": 10}, {"param": "x", "op": ">=", "value": 5}))


def test_disjoint_triggers_accepted():
    validate_model(minimal({"param": "x", "op": ">=", "value": 10}, {"param": "x", "op": "<", "value": 10}))


def test_schema_and_reference_errors():
    doc = minimal({"param": "x", "op": ">=", "value": 10})
    bad = copy.deepcopy(doc)
    bad["transitions"][0]["trigger"][0]["param"] = "nope"
    with pytest.raises(DanglingReference):
        validate_model(bad)
    bad = copy.deepcopy(doc)
    bad["transitions"][0]["rules"] = ["missing"]
    with pytest.raises(DanglingReference):
        validate_model(bad)
    bad = copy.deepcopy(doc)
    bad["states"].append({"id": "island"})
    with pytest.raises(SchemaError):
        validate_model(bad)
    bad = copy.deepcopy(doc)
    bad["states"][1]["initial"] = True
    with pytest.raises(SchemaError):
        validate_model(bad)
    with pytest.raises(SchemaError):
        validate_model(b"[1, 2]")
    with pytest.raises(SchemaError):
        validate_model({"name": "x", "parameters": "no"})


def test_step_minimal():
    model = validate_model(minimal({"param": "x", "op": ">=", "value": 10}))
    assert step_dfa(model, "init", {"x": 3}) == ("init", [])
    state, actions = step_dfa(model, "init", {"x": 10})
    assert state == "done" and [a.kind for a in actions] == ["create_transaction"]
    with pytest.raises(MissingObservation):
        step_dfa(model, "init", {})
    with pytest.raises(UnknownState):
        step_dfa(model, "nowhere", {"x": 1})


def test_building_model():
    model = validate_model(BUILDING)
    assert [s.id for s in model.states] == ["plan_pending", "plan_approved", "standard_pending",
                                            "standard_approved", "closed"]
    assert len(model.transitions) == 4
    state, actions = step_dfa(model, "plan_pending", {"plans_certificate": "issued"})
    assert state == "plan_approved"
    assert [(a.kind, a.fields["template"]["name"]) for a in actions] == [("create_transaction", "T4")]


def test_building_compilation():
    model = validate_model(BUILDING)
    program, templates = compile_model(model)
    assert len(program.bindings) == 4
    assert [t.name for t in templates] == ["T2", "T3", "T4", "closure"]
    watch = program.for_state("plan_approved")[0]
    assert "final_certificate" in watch.monitor.params
    t2 = templates[0]
    assert t2.m == 2 and len(t2.key_slots) == 3
    assert {"$contract_value"} <= templates[3].placeholders()


def test_minimal_compilation():
    program, templates = compile_model(validate_model(minimal({"param": "x", "op": ">=", "value": 10})))
    assert len(program.bindings) == 1 and len(templates) == 1


@given(st.dictionaries(st.sampled_from(["a", "b", "c"]), st.integers(0, 5)))
def test_model_serialization_is_canonical(instance):
    doc = minimal({"param": "x", "op": ">=", "value": 10})
    doc["parameters"] += [{"name": k, "source": "constant", "type": "integer"} for k in "abc"]
    doc["instance"] = instance
    model = validate_model(doc)
    data = model.serialize()
    assert validate_model(data).serialize() == data
    assert canonical.canonicalize(data) == data


# -- validation soundness over small finite domains ------------------------------------

STATES = ["s0", "s1", "s2"]
PARAMS = [{"name": "n", "source": "onchain", "type": "integer", "min": 0, "max": 3},
          {"name": "e", "source": "offchain", "type": "enum", "values": ["a", "b", "c"]}]
INT_OPS = ["=", "!=", "<", "<=", ">", ">="]
comparison = st.one_of(
    st.fixed_dictionaries({"param": st.just("n"), "op": st.sampled_from(INT_OPS), "value": st.integers(0, 3)}),
    st.fixed_dictionaries({"param": st.just("e"), "op": st.sampled_from(["=", "!="]),
                           "value": st.sampled_from(["a", "b", "c"])}),
)
trigger = st.lists(comparison, min_size=1, max_size=3)
extra = st.fixed_dictionaries({"from": st.sampled_from(STATES), "to": st.sampled_from(STATES),
                               "trigger": trigger, "rules": st.just([])})


@st.composite
def random_models(draw):
    # a reachable backbone plus arbitrary extra transitions
    backbone = [{"from": "s0", "to": "s1", "trigger": draw(trigger), "rules": []},
                {"from": "s1", "to": "s2", "trigger": draw(trigger), "rules": []}]
    return {
        "name": "random",
        "parameters": PARAMS,
        "states": [{"id": "s0", "initial": True}, {"id": "s1"}, {"id": "s2", "terminal": True}],
        "transitions": backbone + draw(st.lists(extra, max_size=4)),
    }


def fires_together(model, state):
    for n, e in itertools.product(range(4), "abc"):
        try:
            step_dfa(model, state, {"n": n, "e": e})
        except AmbiguousTransition:
            return True
    return False


@settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(random_models())
def test_accepted_models_never_ambiguous(doc):
    try:
        model = validate_model(doc)
    except DeterminismError:
        assume(False)
    for state in STATES:
        assert not fires_together(model, state)


def test_determinism_check_exact_for_pairs():
    """Every pair of single-comparison triggers: rejected iff some observation fires both."""
    comps = [{"param": "n", "op": op, "value": v} for op in INT_OPS for v in range(4)]
    comps += [{"param": "e", "op": op, "value": v} for op in ("=", "!=") for v in "abc"]
    for a, b in itertools.combinations(comps, 2):
        doc = {"name": "pair", "parameters": PARAMS,
               "states": [{"id": "s0", "initial": True}, {"id": "s1", "terminal": True}],
               "transitions": [{"from": "s0", "to": "s1", "trigger": [a], "rules": []},
                               {"from": "s0", "to": "s1", "trigger": [b], "rules": []}]}
        both = any(all(Comparison.from_doc(c).holds({"n": n, "e": e}[c["param"]]) for c in (a, b))
                   for n, e in itertools.product(range(4), "abc"))
        if both:
            with pytest.raises(DeterminismError):
                validate_model(doc)
        else:
            assert not fires_together(validate_model(doc), "s0")


@settings(max_examples=50, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(random_models())
def test_compilation_covers_transitions(doc):
    try:
        model = validate_model(doc)
    except DeterminismError:
        assume(False)
    program, _ = compile_model(model)
    assert len(program.bindings) == len(model.transitions)


# -- repository ------------------------------------------------------------------------


def test_semi_template_and_instance_lines():
    repo = DhtStore()
    model = validate_model(BUILDING)
    key = store_model(repo, model)
    same = derive_semi_template(repo, key, {})
    assert load_entry(repo, same).model == model
    assert load_entry(repo, same).master_ref == key
    amended = derive_semi_template(repo, key, {"instance": {"contract_value": 12000}})
    assert amended != key and amended != same
    assert derive_semi_template(repo, key, {"instance": {"contract_value": 12000}}) == amended
    indices = [append_instance_line(repo, amended, {"plot": p}) for p in (7, 8, 9)]
    assert indices == [0, 1, 2]
    assert repo.line(amended, 1) == {"plot": 8}
    assert load_entry(repo, amended).instance_lines == ({"plot": 7}, {"plot": 8}, {"plot": 9})
    # the body, and with it the look-up key, is untouched by instance lines
    assert canonical.sha256(repo.get(amended)) == amended
    with pytest.raises(DanglingReference):
        append_instance_line(repo, amended, {"colour": 1})
    with pytest.raises(UnknownKey):
        derive_semi_template(repo, bytes(32), {})
    with pytest.raises(UnknownKey):
        append_instance_line(repo, bytes(32), {})
