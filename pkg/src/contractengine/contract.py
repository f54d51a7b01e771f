"""Codified contract models.

A contract document declares typed parameters, counterparty roles, a
deterministic finite automaton whose transitions fire on conjunctions of
comparisons, and a rules table of actions applied while transitioning.
Documents are canonical JSON; repository entries wrap a model body together
with an optional link to the template it was derived from.

Document layout::

    {
      "scheme": "contract-model/1",
      "name": "building",
      "roles": ["master_agent", "building_company", ...],
      "parameters": [{"name": "plans_certificate", "source": "offchain",
                      "type": "enum", "values": ["pending", "issued"]}, ...],
      "states": [{"id": "plan_pending", "initial": true, "terminal": false}, ...],
      "transitions": [{"from": "plan_pending", "to": "plan_approved",
                       "trigger": [{"param": "plans_certificate", "op": "=",
                                    "value": "issued"}],
                       "rules": ["pay_control_fee"]}, ...],
      "rules": {"pay_control_fee": {"action": "create_transaction",
                                    "template": {...}}, ...},
      "start_rules": [...],
      "instance": {"fee": 1500}
    }

Inside action fields a string ``"$name"`` refers to a declared parameter and
``"@name"`` to one of the built-in references in ``BUILTIN_REFS``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union

from . import canonical
from .dht import DhtStore, UnknownKey
from .errors import EngineError
from .predicates import (
    Comparison,
    Domain,
    EnumDomain,
    IntDomain,
    PredicateError,
    satisfiable,
)

SCHEME = "contract-model/1"
SOURCES = ("onchain", "offchain", "constant")
PARAM_TYPES = ("integer", "amount", "enum", "timestamp")
BUILTIN_REFS = frozenset({"contract_ref", "master_ref", "instance_line", "parent_txid"})


class ContractError(EngineError):
    def __init__(self, message: str, violations: Optional[list[str]] = None):
        super().__init__(message)
        self.violations = violations or [message]


class SchemaError(ContractError):
    pass


class DeterminismError(ContractError):
    pass


class DanglingReference(ContractError):
    pass


class AmbiguousTransition(ContractError):
    pass


class MissingObservation(ContractError):
    pass


class UnknownState(ContractError):
    pass


# -- model types -----------------------------------------------------------------


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    source: str
    type: str
    values: Optional[tuple[str, ...]] = None
    min: Optional[int] = None
    max: Optional[int] = None

    @property
    def domain(self) -> Domain:
        if self.type == "enum":
            return EnumDomain(frozenset(self.values or ()))
        lo = self.min
        if lo is None and self.type in ("amount", "timestamp"):
            lo = 0
        return IntDomain(lo, self.max)

    def to_doc(self) -> dict:
        doc: dict[str, Any] = {"name": self.name, "source": self.source, "type": self.type}
        if self.type == "enum":
            doc["values"] = list(self.values or ())
        else:
            if self.min is not None:
                doc["min"] = self.min
            if self.max is not None:
                doc["max"] = self.max
        return doc


@dataclass(frozen=True)
class State:
    id: str
    initial: bool = False
    terminal: bool = False

    def to_doc(self) -> dict:
        return {"id": self.id, "initial": self.initial, "terminal": self.terminal}


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    trigger: tuple[Comparison, ...]
    rules: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {
            "from": self.source,
            "to": self.target,
            "trigger": [c.to_doc() for c in self.trigger],
            "rules": list(self.rules),
        }


@dataclass(frozen=True)
class Action:
    """One rules-table entry; ``kind`` selects the meaning of ``fields``."""

    kind: str
    fields: Mapping[str, Any]

    KINDS = {
        "create_transaction": ("template",),
        "circulate_for_signature": ("template", "signers"),
        "notify_offchain": ("channel", "payload"),
        "verify_past_record": ("query",),
        "monitor_parameter": ("name",),
    }

    def to_doc(self) -> dict:
        return {"action": self.kind, **self.fields}

    def resolve(self, values: Mapping[str, Any]) -> "Action":
        """Substitute ``$param`` references that have a known value."""
        return Action(self.kind, _substitute(dict(self.fields), values))

    def __hash__(self):
        return hash(canonical.dumps(self.to_doc()))

    def __eq__(self, other):
        return isinstance(other, Action) and self.to_doc() == other.to_doc()


def _substitute(value: Any, values: Mapping[str, Any]) -> Any:
    if isinstance(value, str) and value.startswith("$") and value[1:] in values:
        return values[value[1:]]
    if isinstance(value, dict):
        return {k: _substitute(v, values) for k, v in value.items()}
    if isinstance(value, list):
        return [_substitute(v, values) for v in value]
    return value


def _references(value: Any, prefix: str) -> set[str]:
    if isinstance(value, str) and value.startswith(prefix):
        return {value[1:]}
    if isinstance(value, dict):
        return set().union(*(_references(v, prefix) for v in value.values())) if value else set()
    if isinstance(value, list):
        return set().union(*(_references(v, prefix) for v in value)) if value else set()
    return set()


@dataclass(frozen=True)
class ContractModel:
    name: str
    parameters: tuple[ParameterSpec, ...]
    states: tuple[State, ...]
    transitions: tuple[Transition, ...]
    rules: Mapping[str, Action]
    roles: tuple[str, ...] = ()
    start_rules: tuple[str, ...] = ()
    instance: Mapping[str, Any] = field(default_factory=dict)
    scheme: str = SCHEME

    @property
    def initial_state(self) -> str:
        return next(s.id for s in self.states if s.initial)

    @property
    def terminal_states(self) -> frozenset[str]:
        return frozenset(s.id for s in self.states if s.terminal)

    def param(self, name: str) -> ParameterSpec:
        for p in self.parameters:
            if p.name == name:
                return p
        raise DanglingReference(f"unknown parameter {name!r}")

    def outgoing(self, state: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == state]

    def to_doc(self) -> dict:
        return {
            "scheme": self.scheme,
            "name": self.name,
            "roles": list(self.roles),
            "parameters": [p.to_doc() for p in self.parameters],
            "states": [s.to_doc() for s in self.states],
            "transitions": [t.to_doc() for t in self.transitions],
            "rules": {rid: a.to_doc() for rid, a in self.rules.items()},
            "start_rules": list(self.start_rules),
            "instance": dict(self.instance),
        }

    def serialize(self) -> bytes:
        return canonical.dumps(self.to_doc())

    def __hash__(self):
        return hash(self.serialize())

    def __eq__(self, other):
        return isinstance(other, ContractModel) and self.serialize() == other.serialize()


# -- parsing and validation -----------------------------------------------------------


def _require(doc: Mapping, key: str, kind, where: str, errors: list[str], default=None):
    if key not in doc:
        if default is not None:
            return default
        errors.append(f"{where}: missing field {key!r}")
        return None
    value = doc[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        errors.append(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
        return None
    return value


def _parse(doc: Any) -> ContractModel:
    errors: list[str] = []
    if not isinstance(doc, dict):
        raise SchemaError("contract document must be an object")
    scheme = doc.get("scheme", SCHEME)
    if scheme != SCHEME:
        errors.append(f"unsupported scheme {scheme!r}")
    name = _require(doc, "name", str, "$", errors)
    roles = _require(doc, "roles", list, "$", errors, default=[])

    params = []
    for i, p in enumerate(_require(doc, "parameters", list, "$", errors) or []):
        where = f"parameters[{i}]"
        if not isinstance(p, dict):
            errors.append(f"{where}: expected object")
            continue
        pname = _require(p, "name", str, where, errors)
        source = _require(p, "source", str, where, errors)
        ptype = _require(p, "type", str, where, errors)
        if source is not None and source not in SOURCES:
            errors.append(f"{where}.source: must be one of {SOURCES}")
        if ptype is not None and ptype not in PARAM_TYPES:
            errors.append(f"{where}.type: must be one of {PARAM_TYPES}")
        values = None
        if ptype == "enum":
            raw = _require(p, "values", list, where, errors)
            if raw is not None:
                if not raw or not all(isinstance(v, str) for v in raw):
                    errors.append(f"{where}.values: non-empty list of strings required")
                values = tuple(raw)
        lo, hi = p.get("min"), p.get("max")
        for bound in (lo, hi):
            if bound is not None and (isinstance(bound, bool) or not isinstance(bound, int)):
                errors.append(f"{where}: bounds must be integers")
        params.append(ParameterSpec(pname, source, ptype, values, lo, hi))

    states = []
    for i, s in enumerate(_require(doc, "states", list, "$", errors) or []):
        where = f"states[{i}]"
        if not isinstance(s, dict):
            errors.append(f"{where}: expected object")
            continue
        states.append(State(_require(s, "id", str, where, errors),
                            bool(s.get("initial", False)), bool(s.get("terminal", False))))

    transitions = []
    for i, t in enumerate(_require(doc, "transitions", list, "$", errors) or []):
        where = f"transitions[{i}]"
        if not isinstance(t, dict):
            errors.append(f"{where}: expected object")
            continue
        trigger = []
        for c in _require(t, "trigger", list, where, errors, default=[]):
            try:
                trigger.append(Comparison.from_doc(c))
            except (PredicateError, TypeError) as exc:
                errors.append(f"{where}.trigger: {exc}")
        rules = _require(t, "rules", list, where, errors, default=[])
        transitions.append(Transition(_require(t, "from", str, where, errors),
                                      _require(t, "to", str, where, errors),
                                      tuple(trigger), tuple(rules)))

    rules = {}
    for rid, a in (_require(doc, "rules", dict, "$", errors, default={}) or {}).items():
        where = f"rules.{rid}"
        if not isinstance(a, dict) or a.get("action") not in Action.KINDS:
            errors.append(f"{where}: action must be one of {sorted(Action.KINDS)}")
            continue
        fields = {k: v for k, v in a.items() if k != "action"}
        missing = [f for f in Action.KINDS[a["action"]] if f not in fields]
        if missing:
            errors.append(f"{where}: missing {missing}")
            continue
        rules[rid] = Action(a["action"], fields)

    start_rules = _require(doc, "start_rules", list, "$", errors, default=[])
    instance = _require(doc, "instance", dict, "$", errors, default={})
    try:
        canonical.dumps(doc)
    except canonical.CanonicalError as exc:
        errors.append(str(exc))
    if errors:
        raise SchemaError(errors[0], errors)
    return ContractModel(name, tuple(params), tuple(states), tuple(transitions), rules,
                         tuple(roles), tuple(start_rules), instance)


def _check_template(rid: str, action: Action, model: ContractModel, errors: list[str]) -> None:
    if action.kind != "create_transaction":
        return
    tmpl = action.fields.get("template")
    if not isinstance(tmpl, dict) or not isinstance(tmpl.get("name"), str):
        errors.append(f"rules.{rid}: transaction template needs a 'name'")
        return
    if "amount" not in tmpl:
        errors.append(f"rules.{rid}: transaction template needs an 'amount'")
    m = tmpl.get("m", len(tmpl.get("signers", [])))
    if tmpl.get("signers") and not (isinstance(m, int) and 1 <= m <= len(tmpl["signers"])):
        errors.append(f"rules.{rid}: m must satisfy 1 <= m <= number of signers")


def _references_ok(model: ContractModel, errors: list[str]) -> None:
    names = {p.name for p in model.parameters}
    state_ids = {s.id for s in model.states}
    roles = set(model.roles)
    for t in model.transitions:
        for end in (t.source, t.target):
            if end not in state_ids:
                errors.append(f"transition {t.source}->{t.target}: unknown state {end!r}")
        for c in t.trigger:
            if c.param not in names:
                errors.append(f"transition {t.source}->{t.target}: unknown parameter {c.param!r}")
        for rid in t.rules:
            if rid not in model.rules:
                errors.append(f"transition {t.source}->{t.target}: unknown rule {rid!r}")
    for rid in model.start_rules:
        if rid not in model.rules:
            errors.append(f"start_rules: unknown rule {rid!r}")
    for rid, action in model.rules.items():
        for ref in sorted(_references(dict(action.fields), "$") - names):
            errors.append(f"rules.{rid}: unknown parameter ${ref}")
        for ref in sorted(_references(dict(action.fields), "@") - BUILTIN_REFS):
            errors.append(f"rules.{rid}: unknown built-in @{ref}")
        signers = list(action.fields.get("signers", []))
        if action.kind == "create_transaction" and isinstance(action.fields.get("template"), dict):
            signers += list(action.fields["template"].get("signers", []))
        for role in signers:
            if role not in roles:
                errors.append(f"rules.{rid}: unknown role {role!r}")
        if action.kind == "monitor_parameter" and action.fields["name"] not in names:
            errors.append(f"rules.{rid}: unknown parameter {action.fields['name']!r}")
    for key in model.instance:
        if key not in names:
            errors.append(f"instance: unknown parameter {key!r}")


def _structure_ok(model: ContractModel, errors: list[str]) -> None:
    ids = [s.id for s in model.states]
    if len(set(ids)) != len(ids):
        errors.append("duplicate state ids")
    names = [p.name for p in model.parameters]
    if len(set(names)) != len(names):
        errors.append("duplicate parameter names")
    initial = [s.id for s in model.states if s.initial]
    if len(initial) != 1:
        errors.append(f"exactly one initial state required, found {len(initial)}")
    if not any(s.terminal for s in model.states):
        errors.append("at least one terminal state required")
    params = {p.name: p for p in model.parameters}
    for t in model.transitions:
        for c in t.trigger:
            spec = params.get(c.param)
            if spec is None:
                continue
            if spec.type == "enum":
                if not isinstance(c.value, str):
                    errors.append(f"trigger on enum {c.param!r} compares with non-string")
                elif c.op not in ("=", "!="):
                    errors.append(f"trigger on enum {c.param!r} uses ordered comparator")
                elif c.value not in (spec.values or ()):
                    errors.append(f"trigger value {c.value!r} outside domain of {c.param!r}")
            elif not isinstance(c.value, int):
                errors.append(f"trigger on {spec.type} {c.param!r} compares with non-integer")
    for key, value in model.instance.items():
        spec = params.get(key)
        if spec is not None and not spec.domain.admits(value):
            errors.append(f"instance value for {key!r} outside its domain")
    for rid, action in model.rules.items():
        _check_template(rid, action, model, errors)


def _reachability_ok(model: ContractModel, errors: list[str]) -> None:
    start = model.initial_state
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for t in model.outgoing(s):
            if t.target not in seen:
                seen.add(t.target)
                queue.append(t.target)
    for s in model.states:
        if s.id not in seen:
            errors.append(f"state {s.id!r} is unreachable from {start!r}")


def overlapping_transitions(model: ContractModel) -> list[tuple[Transition, Transition]]:
    """Pairs of transitions leaving one state whose triggers can hold together."""
    domains = {p.name: p.domain for p in model.parameters}
    pairs = []
    for state in model.states:
        out = model.outgoing(state.id)
        for a in range(len(out)):
            for b in range(a + 1, len(out)):
                if satisfiable(out[a].trigger + out[b].trigger, domains):
                    pairs.append((out[a], out[b]))
    return pairs


def validate_model(document: Union[bytes, str, Mapping, ContractModel]) -> ContractModel:
    """Parse and validate a contract document, raising on the first failing category."""
    if isinstance(document, ContractModel):
        document = document.to_doc()
    if isinstance(document, (bytes, str)):
        try:
            document = canonical.loads(document)
        except canonical.CanonicalError as exc:
            raise SchemaError(str(exc)) from exc
    model = _parse(document)

    errors: list[str] = []
    _structure_ok(model, errors)
    if errors:
        raise SchemaError(errors[0], errors)
    _references_ok(model, errors)
    if errors:
        raise DanglingReference(errors[0], errors)
    _reachability_ok(model, errors)
    if errors:
        raise SchemaError(errors[0], errors)
    overlaps = overlapping_transitions(model)
    if overlaps:
        msgs = [f"transitions {a.source}->{a.target} and {b.source}->{b.target} can fire together"
                for a, b in overlaps]
        raise DeterminismError(msgs[0], msgs)
    return model


def parse_model(document: Union[bytes, str, Mapping]) -> ContractModel:
    return validate_model(document)


# -- execution --------------------------------------------------------------------


def step_dfa(model: ContractModel, state: str, observations: Mapping[str, Any]) -> tuple[str, list[Action]]:
    if state not in {s.id for s in model.states}:
        raise UnknownState(f"unknown state {state!r}")
    values = dict(model.instance)
    values.update(observations)
    fired = []
    for t in model.outgoing(state):
        for c in t.trigger:
            if c.param in observations:
                continue
            if c.param in model.instance and model.param(c.param).source == "constant":
                continue
            raise MissingObservation(f"no observation for {c.param!r} in state {state!r}")
        if all(c.holds(values[c.param]) for c in t.trigger):
            fired.append(t)
    if len(fired) > 1:
        raise AmbiguousTransition(f"{len(fired)} transitions fire from {state!r}")
    if not fired:
        return state, []
    t = fired[0]
    return t.target, [model.rules[rid].resolve(values) for rid in t.rules]


# -- compilation ------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorSpec:
    params: tuple[str, ...]
    trigger: tuple[Comparison, ...]


@dataclass(frozen=True)
class ActionSpec:
    target: str
    rules: tuple[str, ...]
    actions: tuple[Action, ...]


@dataclass(frozen=True)
class Binding:
    state: str
    monitor: MonitorSpec
    action: ActionSpec


@dataclass(frozen=True)
class AgentProgram:
    bindings: tuple[Binding, ...]
    start: tuple[Action, ...] = ()

    def for_state(self, state: str) -> list[Binding]:
        return [b for b in self.bindings if b.state == state]


@dataclass(frozen=True)
class ScriptTemplate:
    """Transaction skeleton with named slots filled in at issuance time."""

    rule: str
    name: str
    m: int
    key_slots: tuple[str, ...]
    metadata_slots: tuple[Any, ...]
    amount: Any
    lock_time: Any = 0

    def placeholders(self) -> set[str]:
        found = {f"key:{role}" for role in self.key_slots}
        for v in (*self.metadata_slots, self.amount, self.lock_time):
            if isinstance(v, str) and v[:1] in "$@":
                found.add(v)
        return found


def compile_model(model: ContractModel) -> tuple[AgentProgram, list[ScriptTemplate]]:
    bindings = []
    for t in model.transitions:
        monitored = {c.param for c in t.trigger}
        for rid in t.rules:
            action = model.rules[rid]
            if action.kind == "monitor_parameter":
                monitored.add(action.fields["name"])
        bindings.append(Binding(
            t.source,
            MonitorSpec(tuple(sorted(monitored)), t.trigger),
            ActionSpec(t.target, t.rules, tuple(model.rules[r] for r in t.rules)),
        ))

    order: list[str] = []
    for rid in list(model.start_rules) + [r for t in model.transitions for r in t.rules]:
        if rid not in order:
            order.append(rid)
    order += sorted(set(model.rules) - set(order))
    templates = []
    for rid in order:
        action = model.rules[rid]
        if action.kind != "create_transaction":
            continue
        tmpl = action.fields["template"]
        signers = tuple(tmpl.get("signers", ()))
        templates.append(ScriptTemplate(
            rule=rid,
            name=tmpl["name"],
            m=tmpl.get("m", len(signers)),
            key_slots=signers,
            metadata_slots=tuple(tmpl.get("metadata", ("@contract_ref",))),
            amount=tmpl["amount"],
            lock_time=tmpl.get("lock_time", 0),
        ))
    program = AgentProgram(tuple(bindings), tuple(model.rules[r] for r in model.start_rules))
    return program, templates


# -- repository ---------------------------------------------------------------------


@dataclass(frozen=True)
class RepositoryEntry:
    model: ContractModel
    master_ref: Optional[bytes]
    instance_lines: tuple[Mapping[str, Any], ...] = ()

    @property
    def body(self) -> bytes:
        return entry_body(self.model, self.master_ref)


def entry_body(model: ContractModel, master_ref: Optional[bytes] = None) -> bytes:
    return canonical.dumps({"body": model.to_doc(), "master_ref": master_ref.hex() if master_ref else None})


def store_model(repo: DhtStore, model: ContractModel, master_ref: Optional[bytes] = None) -> bytes:
    if master_ref is not None:
        repo.require(master_ref)
    return repo.put(entry_body(model, master_ref))


def load_entry(repo: DhtStore, key: bytes) -> RepositoryEntry:
    doc = canonical.loads(repo.require(key))
    ref = doc.get("master_ref")
    return RepositoryEntry(validate_model(doc["body"]), bytes.fromhex(ref) if ref else None,
                           repo.lines(key))


def _merge(base: Any, amendment: Any) -> Any:
    if isinstance(base, dict) and isinstance(amendment, dict):
        out = dict(base)
        for k, v in amendment.items():
            out[k] = _merge(base.get(k), v) if k in base else v
        return out
    return amendment


def derive_semi_template(repo: DhtStore, template_key: bytes, amendments: Mapping[str, Any]) -> bytes:
    """Store an amended copy of a template that links back to it."""
    entry = load_entry(repo, template_key)
    model = validate_model(_merge(entry.model.to_doc(), dict(amendments)))
    return store_model(repo, model, master_ref=template_key)


def append_instance_line(repo: DhtStore, semi_template_key: bytes, params: Mapping[str, Any]) -> int:
    entry = load_entry(repo, semi_template_key)
    names = {p.name for p in entry.model.parameters}
    unknown = sorted(set(params) - names)
    if unknown:
        raise DanglingReference(f"instance line names undeclared parameters {unknown}")
    return repo.append_line(semi_template_key, dict(params))


__all__ = [
    "Action", "ActionSpec", "AgentProgram", "AmbiguousTransition", "Binding", "ContractError",
    "ContractModel", "DanglingReference", "DeterminismError", "MissingObservation", "MonitorSpec",
    "ParameterSpec", "RepositoryEntry", "SchemaError", "ScriptTemplate", "State", "Transition",
    "UnknownKey", "UnknownState", "append_instance_line", "compile_model", "derive_semi_template",
    "entry_body", "load_entry", "overlapping_transitions", "parse_model", "step_dfa", "store_model",
    "validate_model",
]
