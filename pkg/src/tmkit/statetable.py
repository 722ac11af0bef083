"""State-transition tables: import, execution, and translation to a model.

A table row reads (state, signal, action, next state); ``run_table`` folds
an input sequence through the rows as a plain deterministic machine and is
the oracle that ``table_to_tm``'s construction is checked against.

Canonical construction
----------------------
Every signal enters through its own boundary port machine; each row becomes
a trigger from that port into the row's action machine, guarded on the
current value of a state flag, plus a second trigger advancing the flag to
the row's next state.  Decision outcomes therefore stay input-driven, which
is what makes exhaustive equivalence against the table well-defined.

Regions: one per row, one per arrival signal (a signal consumed only at
single-exit states), and one per configured determination state (a state
whose condition is conceptually read off a stored resource; the entering
action machine gets a gauge storage and the read gets its own region).
Latched conditions (e.g. an out-of-money light) are added as flags via the
latch configuration.

The table keeps calling its inputs EVENTS in the header; everywhere else
they are called signals to keep them apart from region+time events.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

from .core import (
    Choice,
    Flag,
    FlagAssign,
    FlagIs,
    FlagRef,
    FlowArc,
    Machine,
    StageRef,
    StaticModel,
    Storage,
    TriggerArc,
)
from .dynamics import BehavioralModel, Edge, Event, EventRegion, build_behavior, mk_event
from .errors import (
    EmptyTableError,
    MissingColumnError,
    NondeterministicTableError,
    UnhandledSignalError,
)
from .sim import SimConfig, Stimulus, Thing, Trace, simulate


@dataclass(frozen=True)
class Row:
    state: str
    signal: str
    action: str
    next_state: str


@dataclass(frozen=True)
class StateTable:
    rows: tuple[Row, ...]
    initial: str

    def states(self) -> tuple[str, ...]:
        ordered = [self.initial]
        for row in self.rows:
            for name in (row.state, row.next_state):
                if name not in ordered:
                    ordered.append(name)
        return tuple(ordered)

    def signals(self) -> tuple[str, ...]:
        ordered: list[str] = []
        for row in self.rows:
            if row.signal not in ordered:
                ordered.append(row.signal)
        return tuple(ordered)

    def actions(self) -> tuple[str, ...]:
        ordered: list[str] = []
        for row in self.rows:
            if row.action not in ordered:
                ordered.append(row.action)
        return tuple(ordered)

    def row_for(self, state: str, signal: str) -> Row | None:
        for row in self.rows:
            if row.state == state and row.signal == signal:
                return row
        return None

    def exits(self, state: str) -> list[Row]:
        return [r for r in self.rows if r.state == state]


_COLUMNS = ("state", "event", "action", "next state")


def parse_table(text: str, initial: str | None = None) -> StateTable:
    """Read a CSV table with header STATE, EVENT, ACTION, NEXT STATE.

    Header matching is case-insensitive; cells are trimmed; row order is
    preserved.  The initial state defaults to the first row's state.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyTableError("no header row")
    normalized = [h.strip().lower() for h in header]
    indexes = {}
    for col in _COLUMNS:
        if col not in normalized:
            raise MissingColumnError(f"header misses column {col.upper()!r}")
        indexes[col] = normalized.index(col)
    rows = []
    for cells in reader:
        if not any(c.strip() for c in cells):
            continue
        row = Row(*(cells[indexes[col]].strip() for col in _COLUMNS))
        rows.append(row)
    if not rows:
        raise EmptyTableError("table has a header but no rows")
    seen = set()
    for row in rows:
        key = (row.state, row.signal)
        if key in seen:
            raise NondeterministicTableError(
                f"two rows for state {row.state!r} and signal {row.signal!r}"
            )
        seen.add(key)
    start = initial if initial is not None else rows[0].state
    if all(r.state != start for r in rows) and any(r.next_state == start for r in rows):
        # a terminal-only initial state cannot consume anything
        raise EmptyTableError(f"initial state {start!r} has no outgoing rows")
    return StateTable(tuple(rows), start)


def run_table(table: StateTable, inputs: list[str]) -> list[tuple[str, str]]:
    """Fold inputs through the table; raises UNHANDLED_EVENT on a gap."""
    state = table.initial
    out = []
    for i, signal in enumerate(inputs):
        row = table.row_for(state, signal)
        if row is None:
            raise UnhandledSignalError(state, signal, i)
        out.append((row.action, row.next_state))
        state = row.next_state
    return out


# ---------------------------------------------------------------------------
# Table -> model construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Determination:
    """Marks a state whose condition is read off a stored resource.

    The entering action's machine gets a gauge storage (drained one unit
    per firing) and the read gets a dedicated region.
    """

    capacity: int | None = 100
    level: int = 100


@dataclass(frozen=True)
class Latch:
    """A flag set by some rows and cleared by others."""

    flag: str
    owner_action: str
    on: tuple[tuple[str, str], ...]  # (state, signal) row keys
    off: tuple[tuple[str, str], ...]
    on_value: str = "on"
    off_value: str = "off"
    initial: str = "off"


@dataclass
class TableBundle:
    """Everything table_to_tm produces, ready to simulate."""

    table: StateTable
    static: StaticModel
    regions: tuple[EventRegion, ...]
    events: tuple[Event, ...]
    behavior: BehavioralModel
    row_events: dict[str, Row]  # event id -> source row
    signal_ports: dict[str, str]  # signal -> boundary transfer path


def _camel(text: str) -> str:
    return "".join(part.capitalize() for part in text.replace("-", " ").split())


def table_to_tm(
    table: StateTable,
    name_map: dict[str, str] | None = None,
    determinations: dict[str, Determination] | None = None,
    latches: tuple[Latch, ...] = (),
) -> TableBundle:
    """Build the canonical model for a table.

    ``name_map`` groups actions into machines (default: one machine per
    action).  The construction guarantee -- simulated traces project onto
    exactly the row sequence the table takes -- is enforced by
    :func:`check_equivalence`, not assumed.
    """
    name_map = dict(name_map or {})
    determinations = dict(determinations or {})
    states = table.states()
    signals = table.signals()

    for state in determinations:
        if state not in states:
            raise ValueError(f"determination for unknown state {state!r}")
        if not any(r.next_state == state for r in table.rows):
            raise ValueError(f"determination state {state!r} has no entering row")

    def machine_name(action: str) -> str:
        return name_map.get(action, _camel(action))

    # default grouping must stay collision-free per (signal, action) pair,
    # or two rows would share one anchor arc
    for a, b in itertools.combinations(table.rows, 2):
        if a.signal == b.signal and machine_name(a.action) == machine_name(b.action):
            name_map[b.action] = f"{machine_name(b.action)}{_camel(b.state)}"

    machines: list[Machine] = []
    port_of: dict[str, str] = {}
    for signal in signals:
        port = f"In{_camel(signal)}"
        port_of[signal] = port
        machines.append(Machine(port, frozenset({"transfer", "receive"})))

    action_machines: dict[str, str] = {}
    storage_owner: dict[str, str] = {}  # determination state -> machine id
    for state, det in determinations.items():
        entering = next(r for r in table.rows if r.next_state == state)
        storage_owner[state] = machine_name(entering.action)
    latch_owner = {latch.flag: machine_name(latch.owner_action) for latch in latches}

    for action in table.actions():
        mid = machine_name(action)
        if mid in action_machines.values():
            action_machines[action] = mid
            continue
        action_machines[action] = mid
        storages = tuple(
            Storage("store", det.capacity, det.level)
            for state, det in determinations.items()
            if storage_owner[state] == mid
        )
        flags = tuple(
            Flag(latch.flag, (latch.on_value, latch.off_value), latch.initial)
            for latch in latches
            if latch_owner[latch.flag] == mid
        )
        machines.append(
            Machine(mid, frozenset({"create", "process"}), flags=flags, storages=storages)
        )

    state_flag: FlagRef | None = None
    if len(states) >= 2:
        machines.append(Machine("Control", flags=(Flag("state", states, table.initial),)))
        state_flag = FlagRef("Control", "state")

    flows = [
        FlowArc(StageRef(port_of[s], "transfer"), StageRef(port_of[s], "receive"))
        for s in signals
    ]
    for action in table.actions():
        mid = action_machines[action]
        arc = FlowArc(StageRef(mid, "create"), StageRef(mid, "process"))
        if arc not in flows:
            flows.append(arc)

    triggers: list[TriggerArc] = []
    row_fire: dict[Row, TriggerArc] = {}
    for row in table.rows:
        guard = FlagIs(state_flag, row.state) if state_flag else None
        fire = TriggerArc(
            StageRef(port_of[row.signal], "receive"),
            StageRef(action_machines[row.action], "create"),
            guard,
        )
        row_fire[row] = fire
        triggers.append(fire)
        if state_flag:
            advance = TriggerArc(
                StageRef(action_machines[row.action], "create"),
                FlagAssign(state_flag, row.next_state),
                FlagIs(state_flag, row.state),
            )
            if advance not in triggers:
                triggers.append(advance)

    latch_arcs: dict[tuple[str, str], list[TriggerArc]] = {}
    for latch in latches:
        owner = latch_owner[latch.flag]
        for keys, value in ((latch.on, latch.on_value), (latch.off, latch.off_value)):
            for state, signal in keys:
                row = table.row_for(state, signal)
                if row is None:
                    raise ValueError(f"latch {latch.flag!r}: no row ({state!r}, {signal!r})")
                arc = TriggerArc(
                    StageRef(action_machines[row.action], "create"),
                    FlagAssign(FlagRef(owner, latch.flag), value),
                    FlagIs(state_flag, row.state) if state_flag else None,
                )
                triggers.append(arc)
                latch_arcs.setdefault((row.state, row.signal), []).append(arc)

    static = StaticModel(tuple(machines), tuple(flows), tuple(triggers))

    # regions ---------------------------------------------------------------
    decision_states = {s for s in states if len(table.exits(s)) >= 2}
    arrival_signals = [
        s
        for s in signals
        if all(row.state not in decision_states for row in table.rows if row.signal == s)
    ]

    regions: list[EventRegion] = []
    events: list[Event] = []
    row_events: dict[str, Row] = {}

    def add_region(rid: str, elements, anchor, row: Row | None = None):
        reg = EventRegion(rid, static, frozenset(elements), anchor)
        regions.append(reg)
        event = mk_event(reg, f"E_{rid}", events)
        events.append(event)
        if row is not None:
            row_events[event.id] = row
        return event

    arrival_event: dict[str, Event] = {}
    for signal in arrival_signals:
        port = port_of[signal]
        els = [
            StageRef(port, "transfer"),
            FlowArc(StageRef(port, "transfer"), StageRef(port, "receive")).ref(),
            StageRef(port, "receive"),
        ]
        arrival_event[signal] = add_region(f"in{_camel(signal)}", els, StageRef(port, "receive"))

    for i, row in enumerate(table.rows, start=1):
        mid = action_machines[row.action]
        fire = row_fire[row]
        els = [
            fire.ref(),
            StageRef(mid, "create"),
            FlowArc(StageRef(mid, "create"), StageRef(mid, "process")).ref(),
            StageRef(mid, "process"),
        ]
        if state_flag:
            els.append(
                TriggerArc(
                    StageRef(mid, "create"),
                    FlagAssign(state_flag, row.next_state),
                    FlagIs(state_flag, row.state),
                ).ref()
            )
            els.append(state_flag)
        if row.signal not in arrival_signals:
            port = port_of[row.signal]
            els += [
                StageRef(port, "transfer"),
                FlowArc(StageRef(port, "transfer"), StageRef(port, "receive")).ref(),
                StageRef(port, "receive"),
            ]
        for arc in latch_arcs.get((row.state, row.signal), ()):
            els.append(arc.ref())
            els.append(arc.dst.flag)
        add_region(f"row{i}", els, fire.ref(), row)

    check_event: dict[str, Event] = {}
    for state in determinations:
        mid = storage_owner[state]
        els = [
            FlowArc(StageRef(mid, "create"), StageRef(mid, "process")).ref(),
            StageRef(mid, "process"),
        ]
        check_event[state] = add_region(f"check{_camel(state)}", els, StageRef(mid, "process"))

    # behavior ---------------------------------------------------------------
    event_of_row = {row: eid for eid, row in row_events.items()}
    edges: list[Edge] = []

    def add_edge(src: str, dst: str):
        edge = Edge(src, dst)
        if edge not in edges:
            edges.append(edge)

    for row in table.rows:
        if row.signal in arrival_event:
            add_edge(arrival_event[row.signal].id, event_of_row[row])
        for nxt in table.exits(row.next_state):
            add_edge(event_of_row[row], event_of_row[nxt])
        if row.next_state in check_event:
            add_edge(event_of_row[row], check_event[row.next_state].id)
    for state, ev in check_event.items():
        for nxt in table.exits(state):
            add_edge(ev.id, event_of_row[nxt])

    behavior = build_behavior("table", events, edges)
    return TableBundle(table, static, tuple(regions), tuple(events), behavior, row_events, {
        s: f"{port_of[s]}.transfer" for s in signals
    })


# ---------------------------------------------------------------------------
# Equivalence oracle
# ---------------------------------------------------------------------------


@dataclass
class EquivalenceResult:
    equivalent: bool
    counterexample: list[str] | None
    sequences_checked: int

    def to_json_dict(self) -> dict:
        return {"equivalent": self.equivalent, "counterexample": self.counterexample}


def project_trace(bundle: TableBundle, trace: Trace) -> list[tuple[str, str]]:
    """Reduce a trace to the (action, next state) sequence of fired rows."""
    out = []
    for occ in trace.occurrences:
        row = bundle.row_events.get(occ.event)
        if row is not None:
            out.append((row.action, row.next_state))
    return out


def drive(bundle: TableBundle, inputs: list[str], seed: int = 0) -> Trace:
    """Feed a signal sequence to the model, one signal per tick."""
    stimuli = [
        Stimulus(i, bundle.signal_ports[sig], Thing(f"sig{i}"))
        for i, sig in enumerate(inputs)
    ]
    config = SimConfig(seed=seed, max_ticks=max(len(inputs), 1))
    return simulate(bundle.static, bundle.behavior, config, stimuli)


def check_equivalence(table: StateTable, bundle: TableBundle, max_len: int) -> EquivalenceResult:
    """Compare run_table with the model on every sequence up to ``max_len``.

    Sequences are enumerated over the table's signal alphabet in order of
    first appearance, shortest first.  Each sequence is compared on its
    defined prefix -- the part before run_table stops with
    UNHANDLED_EVENT -- since the table assigns the remainder no meaning;
    the model is fed that prefix and its row projection must reproduce the
    table's row sequence exactly.  Every defined prefix is itself one of
    the enumerated sequences, so nothing checkable is skipped.  Returns
    the first diverging sequence, shortest first.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    signals = list(table.signals())
    checked = 0
    verified: dict[tuple[str, ...], bool] = {}
    for length in range(0, max_len + 1):
        for seq in itertools.product(signals, repeat=length):
            inputs = list(seq)
            checked += 1
            try:
                expected = run_table(table, inputs)
                defined = tuple(inputs)
            except UnhandledSignalError as err:
                defined = tuple(inputs[: err.position])
                expected = run_table(table, list(defined))
            same = verified.get(defined)
            if same is None:
                actual = project_trace(bundle, drive(bundle, list(defined)))
                same = actual == expected
                verified[defined] = same
            if not same:
                return EquivalenceResult(False, list(defined), checked)
    return EquivalenceResult(True, None, checked)
