"""Textual source format: parser and canonical serializer.

One statement per concept, so a source file maps one-to-one onto the model
it declares::

    machine Money {
      stages: transfer, receive, process
    }
    flow Money.transfer -> Money.receive
    trigger Money.process -> Coins.create when Panel.lamp == off
    choice verify at Money.process { pass -> Coins.create, fail -> Reject.create }
    region A { Money.transfer, flow Money.transfer -> Money.receive anchor Money.transfer }
    event E_A on A
    behavior vending starts E_A {
      E_A -> E_B delay [0, 60]
    }

Comments run from ``#`` to end of line.  Parsing recovers at statement
boundaries, so one bad statement yields one diagnostic and the rest of the
file is still checked.  ``serialize`` emits the canonical form (statements
sorted by kind then name, two-space indent, LF endings) and
``parse(serialize(doc))`` reproduces ``doc`` exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import core
from .core import (
    And,
    ArcRef,
    Choice,
    Flag,
    FlagAssign,
    FlagIs,
    FlagRef,
    FlowArc,
    Guard,
    KINDS,
    LevelTest,
    Machine,
    Not,
    Or,
    StageRef,
    StaticModel,
    Storage,
    TriggerArc,
    element_sort_key,
)
from .dynamics import BehavioralModel, Edge, Event, EventRegion, build_behavior, mk_event
from .errors import AmbiguousPathError, TmError

KEYWORDS = frozenset(
    {
        "machine", "stages", "flag", "init", "storage", "cap", "level",
        "flow", "trigger", "carries", "when", "choice", "at",
        "region", "anchor", "event", "on", "behavior", "starts", "delay",
        "inf", "and", "or", "not",
    }
) | frozenset(KINDS)

_CANON_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}


@dataclass(frozen=True)
class SourceUnit:
    text: str
    origin: str = "<inline>"

    def normalized(self) -> str:
        return self.text.replace("\r\n", "\n").replace("\r", "\n")


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"  # or "warning"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class Document:
    """Everything one source unit declares."""

    static: StaticModel
    regions: tuple[EventRegion, ...] = ()
    events: tuple[Event, ...] = ()
    behaviors: tuple[BehavioralModel, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(sorted(self.regions, key=lambda r: r.id)))
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.id)))
        object.__setattr__(self, "behaviors", tuple(sorted(self.behaviors, key=lambda b: b.id)))

    def region_map(self):
        return {r.id: r for r in self.regions}

    def event_map(self):
        return {e.id: e for e in self.events}

    def behavior_map(self):
        return {b.id: b for b in self.behaviors}


@dataclass
class ParseResult:
    document: Document | None
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.document is not None

    def require(self) -> Document:
        if self.document is None:
            lines = "; ".join(str(d) for d in self.diagnostics[:5])
            raise TmError(f"parse failed: {lines}")
        return self.document


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t]+)"
    r"|(?P<comment>#[^\n]*)"
    r"|(?P<nl>\n)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<int>[0-9]+)"
    r"|(?P<op>->|==|>=|[{}(),.=<\[\]:])"
)


@dataclass(frozen=True)
class _Tok:
    text: str
    line: int
    col: int
    kind: str  # "name" | "int" | "op" | "eof"


class _ParseError(Exception):
    def __init__(self, tok: _Tok, message: str):
        super().__init__(message)
        self.tok = tok
        self.message = message


def _lex(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, col, pos = 1, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            toks.append(_Tok(text[pos], line, col, "error"))
            pos += 1
            col += 1
            continue
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
            col = 1
        elif kind in ("ws", "comment"):
            col += len(value)
        else:
            toks.append(_Tok(value, line, col, "name" if kind == "name" else kind))
            col += len(value)
        pos = m.end()
    toks.append(_Tok("", line, col, "eof"))
    return toks


# ---------------------------------------------------------------------------
# Raw statement ASTs (paths unresolved)
# ---------------------------------------------------------------------------


@dataclass
class _RawMachine:
    name: str
    pos: tuple[int, int]
    stages: list[str] = field(default_factory=list)
    flags: list[tuple[str, list[str], str]] = field(default_factory=list)
    storages: list[tuple[str, int | None, int]] = field(default_factory=list)
    submachines: list["_RawMachine"] = field(default_factory=list)


@dataclass
class _RawFlow:
    src: list[str]
    dst: list[str]
    pos: tuple[int, int]


@dataclass
class _RawTrigger:
    src: list[str]
    dst: list[str]
    dst_value: str | None  # set => flag assignment target
    carries: str | None
    guard: object | None  # raw guard tree
    pos: tuple[int, int]


@dataclass
class _RawChoice:
    name: str
    stage: list[str]
    outcomes: list[tuple[str, list[str]]]
    pos: tuple[int, int]


@dataclass
class _RawElement:
    arc_kw: str | None  # "flow" | "trigger" | None
    path: list[str]
    dst: list[str] | None
    dst_value: str | None
    pos: tuple[int, int]


@dataclass
class _RawRegion:
    name: str
    elements: list[_RawElement]
    anchor: _RawElement
    anchor_value: str | None
    pos: tuple[int, int]


@dataclass
class _RawEvent:
    name: str
    region: str
    pos: tuple[int, int]


@dataclass
class _RawBehavior:
    name: str
    starts: list[str] | None
    edges: list[tuple[str, str, int, int | None]]
    pos: tuple[int, int]


# raw guard nodes
@dataclass
class _RawAtom:
    path: list[str]
    op: str  # "==" | ">=" | "<"
    value: str
    pos: tuple[int, int]


@dataclass
class _RawNot:
    operand: object


@dataclass
class _RawBin:
    op: str  # "and" | "or"
    left: object
    right: object


_STATEMENT_KEYWORDS = ("machine", "flow", "trigger", "choice", "region", "event", "behavior")


class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0
        self.diagnostics: list[ParseDiagnostic] = []

    # -- token helpers ----------------------------------------------------

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        tok = self.toks[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok.text != text:
            raise _ParseError(tok, f"expected {text!r}, found {tok.text or 'end of input'!r}")
        return self.next()

    def accept(self, text: str) -> bool:
        if self.peek().text == text:
            self.next()
            return True
        return False

    def fresh_name(self, what: str) -> str:
        tok = self.peek()
        if tok.kind != "name":
            raise _ParseError(tok, f"expected a {what} name")
        if tok.text in KEYWORDS:
            raise _ParseError(tok, f"{tok.text!r} is a reserved keyword and cannot name a {what}")
        return self.next().text

    def value_token(self) -> str:
        tok = self.peek()
        if tok.kind != "name":
            raise _ParseError(tok, "expected a value")
        if tok.text == "init":
            raise _ParseError(tok, "'init' cannot be used as a flag value")
        return self.next().text

    def int_token(self) -> int:
        tok = self.peek()
        if tok.kind != "int":
            raise _ParseError(tok, "expected an integer")
        return int(self.next().text)

    def dotted(self, what: str = "path") -> list[str]:
        segs = [self._path_seg(what)]
        while self.peek().text == ".":
            self.next()
            segs.append(self._path_seg(what))
        return segs

    def _path_seg(self, what: str) -> str:
        tok = self.peek()
        if tok.kind != "name":
            raise _ParseError(tok, f"expected a {what} segment")
        return self.next().text

    # -- statements ---------------------------------------------------------

    def parse_document(self):
        raw = {"machines": [], "flows": [], "triggers": [], "choices": [],
               "regions": [], "events": [], "behaviors": []}
        while self.peek().kind != "eof":
            tok = self.peek()
            try:
                if tok.text == "machine":
                    raw["machines"].append(self.machine())
                elif tok.text == "flow":
                    raw["flows"].append(self.flow())
                elif tok.text == "trigger":
                    raw["triggers"].append(self.trigger())
                elif tok.text == "choice":
                    raw["choices"].append(self.choice())
                elif tok.text == "region":
                    raw["regions"].append(self.region())
                elif tok.text == "event":
                    raw["events"].append(self.event())
                elif tok.text == "behavior":
                    raw["behaviors"].append(self.behavior())
                else:
                    raise _ParseError(tok, f"expected a statement, found {tok.text!r}")
            except _ParseError as err:
                self.diagnostics.append(
                    ParseDiagnostic(err.tok.line, err.tok.col, err.message)
                )
                self.synchronize()
        return raw

    def synchronize(self):
        """Skip to the next statement keyword at brace depth zero."""
        depth = 0
        while True:
            tok = self.peek()
            if tok.kind == "eof":
                return
            if tok.text == "{":
                depth += 1
            elif tok.text == "}":
                depth = max(depth - 1, 0)
            elif depth == 0 and tok.text in _STATEMENT_KEYWORDS:
                return
            self.next()

    def machine(self) -> _RawMachine:
        start = self.expect("machine")
        name = self.fresh_name("machine")
        m = _RawMachine(name, (start.line, start.col))
        self.expect("{")
        if self.accept("stages"):
            self.expect(":")
            while True:
                tok = self.peek()
                if tok.text not in KINDS:
                    raise _ParseError(tok, "expected a stage kind (create, process, release, transfer, receive)")
                kind = self.next().text
                if kind in m.stages:
                    raise _ParseError(tok, f"stage {kind!r} listed twice")
                m.stages.append(kind)
                if not self.accept(","):
                    break
        while self.peek().text == "flag":
            self.next()
            fname = self.fresh_name("flag")
            self.expect("{")
            values = [self.value_token()]
            self.expect(",")
            while self.peek().text != "init":
                values.append(self.value_token())
                self.expect(",")
            self.expect("init")
            initial = self.value_token()
            self.expect("}")
            m.flags.append((fname, values, initial))
        if self.peek().text == "storage":
            self.next()
            sname = self.fresh_name("storage")
            self.expect("cap")
            if self.accept("inf"):
                cap = None
            else:
                cap = self.int_token()
            level = 0
            if self.accept("level"):
                level = self.int_token()
            m.storages.append((sname, cap, level))
        while self.peek().text == "machine":
            m.submachines.append(self.machine())
        self.expect("}")
        return m

    def flow(self) -> _RawFlow:
        start = self.expect("flow")
        src = self.dotted("stage")
        self.expect("->")
        dst = self.dotted("stage")
        return _RawFlow(src, dst, (start.line, start.col))

    def trigger(self) -> _RawTrigger:
        start = self.expect("trigger")
        src = self.dotted("stage")
        self.expect("->")
        dst = self.dotted("target")
        dst_value = None
        if self.accept("="):
            dst_value = self.value_token()
        carries = None
        if self.accept("carries"):
            carries = self.fresh_name("payload")
        guard = None
        if self.accept("when"):
            guard = self.guard()
        return _RawTrigger(src, dst, dst_value, carries, guard, (start.line, start.col))

    def choice(self) -> _RawChoice:
        start = self.expect("choice")
        name = self.fresh_name("choice")
        self.expect("at")
        stage = self.dotted("stage")
        self.expect("{")
        outcomes = []
        while True:
            label = self.fresh_name("outcome")
            self.expect("->")
            target = self.dotted("stage")
            outcomes.append((label, target))
            if not self.accept(","):
                break
        self.expect("}")
        return _RawChoice(name, stage, outcomes, (start.line, start.col))

    def element(self) -> _RawElement:
        tok = self.peek()
        arc_kw = None
        if tok.text in ("flow", "trigger"):
            arc_kw = self.next().text
        path = self.dotted("element")
        dst = None
        dst_value = None
        if self.peek().text == "->":
            self.next()
            dst = self.dotted("target")
            if self.accept("="):
                dst_value = self.value_token()
        elif arc_kw is not None:
            raise _ParseError(self.peek(), f"{arc_kw} element needs '-> target'")
        return _RawElement(arc_kw, path, dst, dst_value, (tok.line, tok.col))

    def region(self) -> _RawRegion:
        start = self.expect("region")
        name = self.fresh_name("region")
        self.expect("{")
        elements = [self.element()]
        while self.accept(","):
            elements.append(self.element())
        self.expect("anchor")
        anchor = self.element()
        anchor_value = None
        if self.accept("=="):
            anchor_value = self.value_token()
        self.expect("}")
        return _RawRegion(name, elements, anchor, anchor_value, (start.line, start.col))

    def event(self) -> _RawEvent:
        start = self.expect("event")
        name = self.fresh_name("event")
        self.expect("on")
        region = self.fresh_name("region")
        return _RawEvent(name, region, (start.line, start.col))

    def behavior(self) -> _RawBehavior:
        start = self.expect("behavior")
        name = self.fresh_name("behavior")
        starts = None
        if self.accept("starts"):
            starts = [self.fresh_name("event")]
            while self.accept(","):
                starts.append(self.fresh_name("event"))
        self.expect("{")
        edges = []
        while self.peek().text != "}":
            src = self.fresh_name("event")
            self.expect("->")
            dst = self.fresh_name("event")
            lo, hi = 0, None
            if self.accept("delay"):
                self.expect("[")
                lo = self.int_token()
                self.expect(",")
                if self.accept("inf"):
                    hi = None
                else:
                    hi = self.int_token()
                self.expect("]")
            edges.append((src, dst, lo, hi))
        self.expect("}")
        return _RawBehavior(name, starts, edges, (start.line, start.col))

    # -- guards -------------------------------------------------------------

    def guard(self):
        left = self.guard_and()
        while self.peek().text == "or":
            self.next()
            left = _RawBin("or", left, self.guard_and())
        return left

    def guard_and(self):
        left = self.guard_unary()
        while self.peek().text == "and":
            self.next()
            left = _RawBin("and", left, self.guard_unary())
        return left

    def guard_unary(self):
        tok = self.peek()
        if tok.text == "not":
            self.next()
            return _RawNot(self.guard_unary())
        if tok.text == "(":
            self.next()
            inner = self.guard()
            self.expect(")")
            return inner
        path = self.dotted("flag or storage")
        op_tok = self.peek()
        if op_tok.text == "==":
            self.next()
            return _RawAtom(path, "==", self.value_token(), (tok.line, tok.col))
        if op_tok.text in (">=", "<"):
            self.next()
            return _RawAtom(path, op_tok.text, str(self.int_token()), (tok.line, tok.col))
        raise _ParseError(op_tok, "expected '==', '>=' or '<' in a guard")


# ---------------------------------------------------------------------------
# Resolution: raw ASTs -> Document
# ---------------------------------------------------------------------------


class _Resolver:
    def __init__(self, raw: dict, diagnostics: list[ParseDiagnostic]):
        self.raw = raw
        self.diagnostics = diagnostics

    def error(self, pos: tuple[int, int], message: str):
        self.diagnostics.append(ParseDiagnostic(pos[0], pos[1], message))

    def build(self) -> Document | None:
        machines = tuple(self._machine(r) for r in self.raw["machines"])
        skeleton = StaticModel(machines=machines)

        ids: dict[str, int] = {}
        for root in machines:
            for m in root.walk():
                ids[m.id] = ids.get(m.id, 0) + 1
        for raw_m in self.raw["machines"]:
            self._check_dup(raw_m, ids)

        flows = []
        for rf in self.raw["flows"]:
            src = self._stage(skeleton, rf.src, rf.pos)
            dst = self._stage(skeleton, rf.dst, rf.pos)
            if src and dst:
                flows.append(FlowArc(src, dst))
        triggers = []
        for rt in self.raw["triggers"]:
            src = self._stage(skeleton, rt.src, rt.pos)
            if rt.dst_value is not None:
                flag = self._flag(skeleton, rt.dst, rt.pos)
                dst = FlagAssign(flag, rt.dst_value) if flag else None
            else:
                dst = self._stage(skeleton, rt.dst, rt.pos)
            guard = self._guard(skeleton, rt.guard) if rt.guard is not None else None
            if src and dst and (rt.guard is None or guard):
                triggers.append(TriggerArc(src, dst, guard, rt.carries))
        choices = []
        for rc in self.raw["choices"]:
            stage = self._stage(skeleton, rc.stage, rc.pos)
            outcomes = []
            good = stage is not None
            for label, target in rc.outcomes:
                t = self._stage(skeleton, target, rc.pos)
                if t is None:
                    good = False
                else:
                    outcomes.append((label, t))
            if good:
                choices.append(Choice(rc.name, stage, tuple(outcomes)))

        static = StaticModel(machines, tuple(flows), tuple(triggers), tuple(choices))

        regions = []
        region_names = set()
        for rr in self.raw["regions"]:
            if rr.name in region_names:
                self.error(rr.pos, f"region {rr.name!r} declared twice")
                continue
            region_names.add(rr.name)
            els = []
            ok = True
            for re_ in rr.elements:
                el = self._element(static, re_)
                if el is None:
                    ok = False
                else:
                    els.append(el)
            anchor = self._element(static, rr.anchor)
            if anchor is None:
                ok = False
            if not ok:
                continue
            try:
                regions.append(
                    EventRegion(rr.name, static, frozenset(els), anchor, rr.anchor_value)
                )
            except TmError as err:
                self.error(rr.pos, str(err))

        region_map = {r.id: r for r in regions}
        events = []
        for rev in self.raw["events"]:
            reg = region_map.get(rev.region)
            if reg is None:
                self.error(rev.pos, f"event {rev.name!r}: unknown region {rev.region!r}")
                continue
            try:
                events.append(mk_event(reg, rev.name, events))
            except TmError as err:
                self.error(rev.pos, str(err))

        behaviors = []
        behavior_names = set()
        for rb in self.raw["behaviors"]:
            if rb.name in behavior_names:
                self.error(rb.pos, f"behavior {rb.name!r} declared twice")
                continue
            behavior_names.add(rb.name)
            try:
                behaviors.append(
                    build_behavior(
                        rb.name,
                        events,
                        [Edge(s, d, lo, hi) for s, d, lo, hi in rb.edges],
                        rb.starts,
                    )
                )
            except (TmError, ValueError) as err:
                self.error(rb.pos, str(err))

        if any(d.severity == "error" for d in self.diagnostics):
            return None
        return Document(static, tuple(regions), tuple(events), tuple(behaviors))

    def _check_dup(self, raw_m: _RawMachine, ids: dict[str, int]):
        if ids.get(raw_m.name, 0) > 1:
            self.error(raw_m.pos, f"machine id {raw_m.name!r} declared more than once")
            ids[raw_m.name] = 0  # report once
        for sub in raw_m.submachines:
            self._check_dup(sub, ids)

    def _machine(self, raw_m: _RawMachine) -> Machine:
        return Machine(
            id=raw_m.name,
            stages=frozenset(raw_m.stages),
            flags=tuple(Flag(n, tuple(vs), init) for n, vs, init in raw_m.flags),
            storages=tuple(Storage(n, cap, lv) for n, cap, lv in raw_m.storages),
            submachines=tuple(self._machine(s) for s in raw_m.submachines),
        )

    def _stage(self, model: StaticModel, path: list[str], pos) -> StageRef | None:
        joined = ".".join(path)
        try:
            ref = core.find_stage(model, joined)
        except AmbiguousPathError:
            self.error(pos, f"stage path {joined!r} is ambiguous")
            return None
        if ref is None:
            self.error(pos, f"no stage named {joined!r}")
        return ref

    def _flag(self, model: StaticModel, path: list[str], pos) -> FlagRef | None:
        joined = ".".join(path)
        if len(path) < 2:
            self.error(pos, f"flag reference {joined!r} needs a machine qualifier")
            return None
        machine_id, flag_id = path[-2], path[-1]
        machine = model.all_machines().get(machine_id)
        if machine is None or all(f.id != flag_id for f in machine.flags):
            self.error(pos, f"no flag named {joined!r}")
            return None
        mpath = model.machine_paths()[machine_id]
        prefix = tuple(path[:-2])
        if prefix and mpath[-len(prefix) - 1 : -1] != prefix:
            self.error(pos, f"no flag named {joined!r}")
            return None
        return FlagRef(machine_id, flag_id)

    def _storage(self, model: StaticModel, path: list[str], pos) -> str | None:
        joined = ".".join(path)
        if len(path) >= 2:
            machine_id, sid = path[-2], path[-1]
            machine = model.all_machines().get(machine_id)
            if machine is not None and any(s.id == sid for s in machine.storages):
                return f"{machine_id}.{sid}"
        self.error(pos, f"no storage named {joined!r}")
        return None

    def _guard(self, model: StaticModel, raw) -> Guard | None:
        if isinstance(raw, _RawAtom):
            if raw.op == "==":
                flag = self._flag(model, raw.path, raw.pos)
                return FlagIs(flag, raw.value) if flag else None
            storage = self._storage(model, raw.path, raw.pos)
            return LevelTest(storage, raw.op, int(raw.value)) if storage else None
        if isinstance(raw, _RawNot):
            inner = self._guard(model, raw.operand)
            return Not(inner) if inner else None
        if isinstance(raw, _RawBin):
            left = self._guard(model, raw.left)
            right = self._guard(model, raw.right)
            if left and right:
                return And(left, right) if raw.op == "and" else Or(left, right)
            return None
        raise TypeError(raw)

    def _element(self, model: StaticModel, re_: _RawElement):
        if re_.dst is None:
            # plain path: stage when the tail is a kind, flag otherwise
            if re_.path[-1] in KINDS:
                return self._stage(model, re_.path, re_.pos)
            return self._flag(model, re_.path, re_.pos)
        src = self._stage(model, re_.path, re_.pos)
        if src is None:
            return None
        if re_.dst_value is not None:
            flag = self._flag(model, re_.dst, re_.pos)
            if flag is None:
                return None
            dst = FlagAssign(flag, re_.dst_value)
        else:
            dst = self._stage(model, re_.dst, re_.pos)
            if dst is None:
                return None
        want = re_.arc_kw
        flow_ref = ArcRef("flow", src, dst) if not isinstance(dst, FlagAssign) else None
        trig_ref = ArcRef("trigger", src, dst)
        has_flow = flow_ref is not None and any(a.ref() == flow_ref for a in model.flows)
        has_trig = any(a.ref() == trig_ref for a in model.triggers)
        if want == "flow" or (want is None and has_flow and not has_trig):
            if not has_flow:
                self.error(re_.pos, f"no flow arc {src} -> {dst}")
                return None
            return flow_ref
        if want == "trigger" or (want is None and has_trig and not has_flow):
            if not has_trig:
                self.error(re_.pos, f"no trigger arc {src} -> {dst}")
                return None
            return trig_ref
        if has_flow and has_trig:
            self.error(re_.pos, f"arc {src} -> {dst} is ambiguous; prefix with 'flow' or 'trigger'")
        else:
            self.error(re_.pos, f"no arc {src} -> {dst}")
        return None


def parse(source: SourceUnit | str) -> ParseResult:
    """Parse one source unit into a document, collecting diagnostics.

    Returns a result whose ``document`` is None when any error-severity
    diagnostic was produced.  The same source always yields the identical
    diagnostic list.
    """
    if isinstance(source, str):
        source = SourceUnit(source)
    parser = _Parser(_lex(source.normalized()))
    raw = parser.parse_document()
    diagnostics = parser.diagnostics
    document = _Resolver(raw, diagnostics).build()
    if any(d.severity == "error" for d in diagnostics):
        document = None
    return ParseResult(document, diagnostics)


# ---------------------------------------------------------------------------
# Canonical serializer
# ---------------------------------------------------------------------------


def _fmt_stage(ref: StageRef) -> str:
    return f"{ref.machine}.{ref.kind}"


def _fmt_element(el) -> str:
    if isinstance(el, StageRef):
        return _fmt_stage(el)
    if isinstance(el, FlagRef):
        return f"{el.machine}.{el.flag}"
    if isinstance(el, ArcRef):
        if isinstance(el.dst, FlagAssign):
            return f"{el.arc_type} {_fmt_stage(el.src)} -> {el.dst.flag} = {el.dst.value}"
        return f"{el.arc_type} {_fmt_stage(el.src)} -> {_fmt_stage(el.dst)}"
    raise TypeError(el)


def _fmt_guard(g: Guard) -> str:
    return str(g)


def _machine_lines(machine: Machine, indent: str) -> list[str]:
    lines = [f"{indent}machine {machine.id} {{"]
    inner = indent + "  "
    if machine.stages:
        kinds = sorted(machine.stages, key=_CANON_KIND_ORDER.get)
        lines.append(f"{inner}stages: " + ", ".join(kinds))
    for flag in machine.flags:
        values = ", ".join(flag.values)
        lines.append(f"{inner}flag {flag.id} {{ {values}, init {flag.initial} }}")
    for storage in machine.storages:
        cap = "inf" if storage.capacity is None else str(storage.capacity)
        suffix = f" level {storage.level}" if storage.level else ""
        lines.append(f"{inner}storage {storage.id} cap {cap}{suffix}")
    for sub in machine.submachines:
        lines.extend(_machine_lines(sub, inner))
    lines.append(f"{indent}}}")
    return lines


def serialize(document: Document) -> str:
    """Emit the canonical text form; ``parse`` reproduces the document."""
    lines: list[str] = []
    static = document.static
    for machine in static.machines:
        lines.extend(_machine_lines(machine, ""))
    for arc in static.flows:
        lines.append(f"flow {_fmt_stage(arc.src)} -> {_fmt_stage(arc.dst)}")
    for trig in static.triggers:
        if isinstance(trig.dst, FlagAssign):
            stmt = f"trigger {_fmt_stage(trig.src)} -> {trig.dst.flag} = {trig.dst.value}"
        else:
            stmt = f"trigger {_fmt_stage(trig.src)} -> {_fmt_stage(trig.dst)}"
        if trig.payload is not None:
            stmt += f" carries {trig.payload}"
        if trig.guard is not None:
            stmt += f" when {_fmt_guard(trig.guard)}"
        lines.append(stmt)
    for choice in static.choices:
        outs = ", ".join(f"{label} -> {_fmt_stage(t)}" for label, t in choice.outcomes)
        lines.append(f"choice {choice.name} at {_fmt_stage(choice.stage)} {{ {outs} }}")
    for region_ in document.regions:
        els = ", ".join(_fmt_element(el) for el in region_.sorted_elements())
        anchor = _fmt_element(region_.anchor)
        if region_.anchor_value is not None:
            anchor += f" == {region_.anchor_value}"
        lines.append(f"region {region_.id} {{ {els} anchor {anchor} }}")
    for event in document.events:
        lines.append(f"event {event.id} on {event.region.id}")
    for behavior in document.behaviors:
        head = f"behavior {behavior.id}"
        if behavior.starts:
            head += " starts " + ", ".join(sorted(behavior.starts))
        lines.append(head + " {")
        for edge in behavior.edges:
            stmt = f"  {edge.src} -> {edge.dst}"
            if edge.min_delay or edge.max_delay is not None:
                hi = "inf" if edge.max_delay is None else str(edge.max_delay)
                stmt += f" delay [{edge.min_delay}, {hi}]"
            lines.append(stmt)
        lines.append("}")
    return "\n".join(lines) + ("\n" if lines else "")
