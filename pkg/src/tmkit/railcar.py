"""The railcar terminal protocol as an executable world.

Track layout: a cyclic path of 100-yard areas.  T is a terminal platform,
B the area just before it, A the area just after, and C fills the gaps
(the A, C, ..., C run between two terminals ends with the C adjacent to
the next terminal relabeled B).  Each terminal owns parking spots P1..Pn
behind a shared intake gate P and exit gate PX.

Protocol, one direction (the mirrored half serves the other):

* entering B sets the area occupied and raises ``approaching``, which
  together with T's occupied flag blocks departures out of parking;
* a car in B waits for T to be unoccupied, reserves it (sets occupied
  while still in B), then crosses, clearing B and ``approaching``;
* every car stops in T for 90 ticks, then either continues through A and
  the C run, or parks when a spot is free;
* every area move waits for the next area's occupied flag to clear and
  flips both flags on the hop.

``build_terminal_model`` produces one terminal's static model;
``railcar_events``/``railcar_behavior`` attach the event decomposition and
chronology; ``run_world`` steps a multi-car world deterministically;
``check_safety`` audits traces; ``explore`` enumerates every choice
interleaving breadth-first, reporting violations with minimal witnesses.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field, replace

from .core import (
    And,
    ArcRef,
    Choice,
    Flag,
    FlagAssign,
    FlagIs,
    FlagRef,
    FlowArc,
    Machine,
    StageRef,
    StaticModel,
    TriggerArc,
)
from .dynamics import BehavioralModel, Edge, Event, EventRegion, build_behavior, mk_event
from .errors import BadParamsError, StateBudgetError, UnknownChoicePointError
from .sim import Occurrence, ScriptEntry, SimConfig, Trace

DWELL_TICKS = 90

AREA_KINDS = ("T", "B", "A", "C")

MUTATIONS = frozenset(
    {"no_reservation", "no_approaching_block", "no_dwell", "no_occupancy_guard"}
)

OCCUPIED = ("occupied", "unoccupied")
APPROACHING = ("set", "reset")


# ---------------------------------------------------------------------------
# Static model of one terminal
# ---------------------------------------------------------------------------


def _c_names(segments: int) -> list[str]:
    """Ids of the C areas between A and B: C, C_2, C_3, ..."""
    return ["C" if j == 0 else f"C_{j + 1}" for j in range(segments - 2)]


def build_terminal_model(segments: int = 3, spots: int = 2) -> StaticModel:
    """One terminal of the ring, closed onto itself (the last C feeds B).

    ``segments`` counts the areas between this terminal and the next
    (A, C, ..., with the final one relabeled B), so it must be at least 2.
    ``spots`` of 0 elides the whole parking branch.
    """
    if segments < 2:
        raise BadParamsError("segments must be at least 2")
    if spots < 0:
        raise BadParamsError("spots must be non-negative")

    def occupied_flag() -> Flag:
        return Flag("occupied", OCCUPIED, "unoccupied")

    c_names = _c_names(segments)
    machines = [
        Machine(
            "B",
            frozenset({"transfer", "receive", "process", "release"}),
            flags=(Flag("approaching", APPROACHING, "reset"), occupied_flag()),
        ),
        Machine(
            "T",
            frozenset({"transfer", "receive", "process", "release"}),
            flags=(occupied_flag(),),
        ),
        Machine("A", frozenset({"transfer", "receive", "release"}), flags=(occupied_flag(),)),
    ]
    for name in c_names:
        machines.append(
            Machine(name, frozenset({"transfer", "receive", "release"}), flags=(occupied_flag(),))
        )
    spot_names = [f"P{i + 1}" for i in range(spots)]
    if spots:
        machines.append(Machine("P", frozenset({"transfer"})))
        machines.append(Machine("PX", frozenset({"transfer"})))
        for name in spot_names:
            machines.append(
                Machine(name, frozenset({"transfer", "receive", "release"}), flags=(occupied_flag(),))
            )

    def t(machine: str) -> StageRef:
        return StageRef(machine, "transfer")

    flows: list[FlowArc] = []
    for m in ("B", "T"):
        flows += [
            FlowArc(t(m), StageRef(m, "receive")),
            FlowArc(StageRef(m, "receive"), StageRef(m, "process")),
            FlowArc(StageRef(m, "process"), StageRef(m, "release")),
            FlowArc(StageRef(m, "release"), t(m)),
        ]
    for m in ["A"] + c_names + spot_names:
        flows += [
            FlowArc(t(m), StageRef(m, "receive")),
            FlowArc(StageRef(m, "receive"), StageRef(m, "release")),
            FlowArc(StageRef(m, "release"), t(m)),
        ]
    ring = ["B", "T", "A"] + c_names
    for cur, nxt in zip(ring, ring[1:] + ring[:1]):
        flows.append(FlowArc(t(cur), t(nxt)))
    if spots:
        flows.append(FlowArc(t("T"), t("P")))
        for name in spot_names:
            flows += [FlowArc(t("P"), t(name)), FlowArc(t(name), t("PX"))]
        flows.append(FlowArc(t("PX"), t("T")))

    def unoccupied(machine: str) -> FlagIs:
        return FlagIs(FlagRef(machine, "occupied"), "unoccupied")

    triggers = [
        TriggerArc(StageRef("B", "receive"), FlagAssign(FlagRef("B", "occupied"), "occupied")),
        TriggerArc(StageRef("B", "receive"), FlagAssign(FlagRef("B", "approaching"), "set")),
        TriggerArc(
            StageRef("B", "process"),
            FlagAssign(FlagRef("T", "occupied"), "occupied"),
            unoccupied("T"),
        ),
        TriggerArc(StageRef("B", "release"), FlagAssign(FlagRef("B", "occupied"), "unoccupied")),
        TriggerArc(StageRef("B", "release"), FlagAssign(FlagRef("B", "approaching"), "reset")),
        TriggerArc(StageRef("T", "process"), StageRef("T", "release"), unoccupied("A")),
        TriggerArc(StageRef("T", "release"), FlagAssign(FlagRef("T", "occupied"), "unoccupied")),
        TriggerArc(StageRef("A", "receive"), FlagAssign(FlagRef("A", "occupied"), "occupied")),
        TriggerArc(StageRef("A", "release"), FlagAssign(FlagRef("A", "occupied"), "unoccupied")),
        TriggerArc(
            StageRef("A", "receive"),
            StageRef("A", "release"),
            unoccupied(c_names[0] if c_names else "B"),
        ),
    ]
    run = c_names + ["B"]
    for cur, nxt in zip(c_names, run[1:]):
        triggers += [
            TriggerArc(StageRef(cur, "receive"), FlagAssign(FlagRef(cur, "occupied"), "occupied")),
            TriggerArc(StageRef(cur, "release"), FlagAssign(FlagRef(cur, "occupied"), "unoccupied")),
            TriggerArc(StageRef(cur, "receive"), StageRef(cur, "release"), unoccupied(nxt)),
        ]
    choices = []
    if spots:
        may_depart = And(
            FlagIs(FlagRef("B", "approaching"), "reset"), unoccupied("T")
        )
        for name in spot_names:
            triggers += [
                TriggerArc(StageRef(name, "receive"), FlagAssign(FlagRef(name, "occupied"), "occupied")),
                TriggerArc(StageRef(name, "release"), FlagAssign(FlagRef(name, "occupied"), "unoccupied")),
                TriggerArc(StageRef(name, "receive"), StageRef(name, "release"), may_depart),
                TriggerArc(StageRef(name, "release"), FlagAssign(FlagRef("T", "occupied"), "occupied")),
            ]
        choices.append(
            Choice(
                "park_or_continue",
                t("T"),
                (("continue", t("A")), ("park", t("P"))),
            )
        )
    return StaticModel(tuple(machines), tuple(flows), tuple(triggers), tuple(choices))


def _model_c_names(model: StaticModel) -> list[str]:
    names = [m for m in model.all_machines() if m == "C" or m.startswith("C_")]
    return sorted(names, key=lambda n: 1 if n == "C" else int(n.split("_")[1]))


def _model_spots(model: StaticModel) -> list[str]:
    names = [m for m in model.all_machines() if m.startswith("P") and m not in ("P", "PX")]
    return sorted(names, key=lambda n: int(n[1:]))


# ---------------------------------------------------------------------------
# Mirror transform
# ---------------------------------------------------------------------------

_KIND_SWAP = {"receive": "release", "release": "receive"}


def _swap_stage(ref: StageRef, suffix: str) -> StageRef:
    return StageRef(ref.machine + suffix, _KIND_SWAP.get(ref.kind, ref.kind))


def _map_guard(guard, suffix: str):
    if guard is None:
        return None
    if isinstance(guard, FlagIs):
        return FlagIs(FlagRef(guard.flag.machine + suffix, guard.flag.flag), guard.value)
    if isinstance(guard, And):
        return And(_map_guard(guard.left, suffix), _map_guard(guard.right, suffix))
    from .core import Not, Or

    if isinstance(guard, Or):
        return Or(_map_guard(guard.left, suffix), _map_guard(guard.right, suffix))
    if isinstance(guard, Not):
        return Not(_map_guard(guard.operand, suffix))
    return guard


def reverse_model(model: StaticModel, suffix: str = "") -> StaticModel:
    """Direction reversal: flip every arc and swap receive with release.

    The legal-step whitelist is closed under this map for create-free
    models, so reversing a valid terminal yields a valid terminal.
    """

    def machine(m: Machine) -> Machine:
        return Machine(
            m.id + suffix,
            frozenset(_KIND_SWAP.get(k, k) for k in m.stages),
            flags=m.flags,
            storages=m.storages,
            submachines=tuple(machine(s) for s in m.submachines),
        )

    flows = tuple(
        FlowArc(_swap_stage(a.dst, suffix), _swap_stage(a.src, suffix)) for a in model.flows
    )
    triggers = []
    for trig in model.triggers:
        if isinstance(trig.dst, FlagAssign):
            dst = FlagAssign(
                FlagRef(trig.dst.flag.machine + suffix, trig.dst.flag.flag), trig.dst.value
            )
            src = _swap_stage(trig.src, suffix)
            triggers.append(TriggerArc(src, dst, _map_guard(trig.guard, suffix), trig.payload))
        else:
            triggers.append(
                TriggerArc(
                    _swap_stage(trig.dst, suffix),
                    _swap_stage(trig.src, suffix),
                    _map_guard(trig.guard, suffix),
                    trig.payload,
                )
            )
    choices = tuple(
        Choice(
            c.name,
            _swap_stage(c.stage, suffix),
            tuple((label, _swap_stage(target, suffix)) for label, target in c.outcomes),
        )
        for c in model.choices
    )
    return StaticModel(
        tuple(machine(m) for m in model.machines), flows, tuple(triggers), choices
    )


def mirror_terminal_model(model: StaticModel, suffix: str = "_m") -> StaticModel:
    """The opposite-direction half of the terminal.

    Geometrically a left-right reflection: same protocol, arrows reversed
    in the shared drawing frame.  Applying the reversal again (and
    stripping the suffix) reproduces the original, which is the
    isomorphism the mirror check asserts.
    """
    return reverse_model(model, suffix)


# ---------------------------------------------------------------------------
# Events and behavior
# ---------------------------------------------------------------------------


def railcar_events(model: StaticModel) -> list[Event]:
    """The event decomposition of one terminal: E1..E15 for the default
    layout; C-run clones are suffixed (E11_2, E13_2, ...) and the parking
    events drop out when the model has no spots."""
    c_names = _model_c_names(model)
    spot_names = _model_spots(model)
    triggers = {(a.src, str(a.dst)): a for a in model.triggers}
    flows = {(a.src, a.dst): a for a in model.flows}

    def t(m: str) -> StageRef:
        return StageRef(m, "transfer")

    def trig(src_machine: str, src_kind: str, dst: str) -> ArcRef:
        return triggers[(StageRef(src_machine, src_kind), dst)].ref()

    def flow(src: StageRef, dst: StageRef) -> ArcRef:
        return flows[(src, dst)].ref()

    entry_of_b = c_names[-1] if c_names else "A"
    regions: list[tuple[str, list, object, str | None]] = []
    regions.append(
        (
            "E1",
            [
                flow(t(entry_of_b), t("B")),
                t("B"),
                flow(t("B"), StageRef("B", "receive")),
                StageRef("B", "receive"),
                trig("B", "receive", "B.occupied = occupied"),
                FlagRef("B", "occupied"),
            ],
            StageRef("B", "receive"),
            None,
        )
    )
    approaching_els = [trig("B", "receive", "B.approaching = set")]
    if spot_names:
        regions.append(("E2", approaching_els, approaching_els[0], None))
        blocked = [FlagRef("B", "approaching")] + [
            trig(name, "receive", f"{name}.release") for name in spot_names
        ]
        regions.append(("E3", blocked, FlagRef("B", "approaching"), "set"))
    else:
        regions.append(
            ("E2", approaching_els + [FlagRef("B", "approaching")], approaching_els[0], None)
        )
    regions.append(
        (
            "E4",
            [flow(StageRef("B", "receive"), StageRef("B", "process")), StageRef("B", "process")],
            StageRef("B", "process"),
            None,
        )
    )
    regions.append(
        (
            "E5",
            [FlagRef("T", "occupied"), trig("T", "release", "T.occupied = unoccupied")],
            FlagRef("T", "occupied"),
            "unoccupied",
        )
    )
    regions.append(
        (
            "E6",
            [
                trig("B", "process", "T.occupied = occupied"),
                flow(StageRef("B", "process"), StageRef("B", "release")),
                StageRef("B", "release"),
                trig("B", "release", "B.occupied = unoccupied"),
                trig("B", "release", "B.approaching = reset"),
                flow(StageRef("B", "release"), t("B")),
            ],
            trig("B", "process", "T.occupied = occupied"),
            None,
        )
    )
    regions.append(
        (
            "E7",
            [flow(t("B"), t("T")), t("T"), flow(t("T"), StageRef("T", "receive")), StageRef("T", "receive")],
            flow(t("B"), t("T")),
            None,
        )
    )
    regions.append(
        (
            "E8",
            [flow(StageRef("T", "receive"), StageRef("T", "process")), StageRef("T", "process")],
            StageRef("T", "process"),
            None,
        )
    )
    regions.append(
        (
            "E9",
            [FlagRef("A", "occupied"), trig("A", "release", "A.occupied = unoccupied")],
            FlagRef("A", "occupied"),
            "unoccupied",
        )
    )
    regions.append(
        (
            "E10",
            [
                trig("T", "process", "T.release"),
                flow(StageRef("T", "process"), StageRef("T", "release")),
                StageRef("T", "release"),
                flow(StageRef("T", "release"), t("T")),
                flow(t("T"), t("A")),
                t("A"),
                flow(t("A"), StageRef("A", "receive")),
                StageRef("A", "receive"),
                trig("A", "receive", "A.occupied = occupied"),
            ],
            flow(t("T"), t("A")),
            None,
        )
    )
    next_after_a = c_names[0] if c_names else "B"
    regions.append(
        (
            "E12",
            [
                trig("A", "receive", f"A.release"),
                flow(StageRef("A", "receive"), StageRef("A", "release")),
                StageRef("A", "release"),
                flow(StageRef("A", "release"), t("A")),
            ],
            flow(StageRef("A", "release"), t("A")),
            None,
        )
    )
    prev = "A"
    for j, name in enumerate(c_names):
        e11 = "E11" if j == 0 else f"E11_{j + 1}"
        e13 = "E13" if j == 0 else f"E13_{j + 1}"
        regions.append(
            (
                e11,
                [FlagRef(name, "occupied"), trig(name, "release", f"{name}.occupied = unoccupied")],
                FlagRef(name, "occupied"),
                "unoccupied",
            )
        )
        regions.append(
            (
                e13,
                [
                    flow(t(prev), t(name)),
                    t(name),
                    flow(t(name), StageRef(name, "receive")),
                    StageRef(name, "receive"),
                    trig(name, "receive", f"{name}.occupied = occupied"),
                    trig(name, "receive", f"{name}.release"),
                    flow(StageRef(name, "receive"), StageRef(name, "release")),
                    StageRef(name, "release"),
                    flow(StageRef(name, "release"), t(name)),
                ],
                flow(t(prev), t(name)),
                None,
            )
        )
        prev = name
    if spot_names:
        park_els: list = [flow(t("T"), t("P")), t("P")]
        unpark_els: list = [t("PX"), flow(t("PX"), t("T"))]
        for name in spot_names:
            park_els += [
                flow(t("P"), t(name)),
                t(name),
                flow(t(name), StageRef(name, "receive")),
                StageRef(name, "receive"),
                trig(name, "receive", f"{name}.occupied = occupied"),
                FlagRef(name, "occupied"),
            ]
            unpark_els += [
                flow(StageRef(name, "receive"), StageRef(name, "release")),
                StageRef(name, "release"),
                trig(name, "release", f"{name}.occupied = unoccupied"),
                trig(name, "release", "T.occupied = occupied"),
                flow(StageRef(name, "release"), t(name)),
                flow(t(name), t("PX")),
            ]
        regions.append(("E14", park_els, t("P"), None))
        regions.append(("E15", unpark_els, t("PX"), None))

    events: list[Event] = []
    for rid, els, anchor, anchor_value in regions:
        region = EventRegion(rid, model, frozenset(els), anchor, anchor_value)
        events.append(mk_event(region, rid, events))
    return events


def railcar_behavior(events: list[Event]) -> BehavioralModel:
    """The chronology of one terminal half.

    E5/E9/E11 join the main line as enabling flag events.  The stop in T
    is modeled as E8 opening at entry with a 90-tick minimum on both ways
    out (continue or park), so terminal dwell is at least the mandated
    stop.  E13 recurs onto E1: the next terminal repeats the behavior.
    """
    ids = {e.id for e in events}
    edges: list[Edge] = [Edge("E1", "E2"), Edge("E2", "E4")]
    if "E3" in ids:
        edges.append(Edge("E2", "E3"))
    edges += [
        Edge("E4", "E6"),
        Edge("E5", "E6"),
        Edge("E6", "E7"),
        Edge("E7", "E8", 0, 0),
        Edge("E8", "E10", DWELL_TICKS, None),
        Edge("E9", "E10"),
        Edge("E10", "E12"),
    ]
    c_events = sorted(
        (eid for eid in ids if eid == "E13" or eid.startswith("E13_")),
        key=lambda e: 1 if e == "E13" else int(e.split("_")[1]),
    )
    if c_events:
        edges.append(Edge("E11", "E12"))
        chain = ["E12"] + c_events
        for cur, nxt in zip(chain, chain[1:]):
            edges.append(Edge(cur, nxt))
        for eid in c_events[1:]:
            edges.append(Edge(f"E11_{eid.split('_')[1]}", eid))
        edges.append(Edge(c_events[-1], "E1"))
    else:
        edges.append(Edge("E12", "E1"))
    if "E14" in ids:
        edges += [
            Edge("E8", "E14", DWELL_TICKS, None),
            Edge("E14", "E15"),
            Edge("E15", "E8", 0, 0),
        ]
    starts = {"E1", "E5", "E9"} | {e for e in ids if e == "E11" or e.startswith("E11_")}
    return build_behavior("terminal", events, edges, sorted(starts))


# ---------------------------------------------------------------------------
# The world
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarSpec:
    id: str
    position: str  # area or spot name, e.g. "C0", "B0", "P1_0"
    dwell: int = 0  # remaining stop time when starting inside a terminal


@dataclass(frozen=True)
class RailcarWorld:
    terminals: int = 6
    segments: int = 3
    spots: int = 2
    cars: tuple[CarSpec, ...] = ()
    mutations: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.terminals < 1:
            raise BadParamsError("at least one terminal")
        if self.segments < 2:
            raise BadParamsError("segments must be at least 2")
        if self.spots < 0:
            raise BadParamsError("spots must be non-negative")
        unknown = self.mutations - MUTATIONS
        if unknown:
            raise BadParamsError(f"unknown mutations: {sorted(unknown)}")
        ring = self.ring()
        spot_set = set(self.spot_names())
        positions = set()
        for car in self.cars:
            if car.position not in ring and car.position not in spot_set:
                raise BadParamsError(f"car {car.id!r}: no area {car.position!r}")
            if car.position in positions:
                raise BadParamsError(f"two cars start in {car.position!r}")
            positions.add(car.position)

    def ring(self) -> list[str]:
        out = []
        for i in range(self.terminals):
            out.append(f"T{i}")
            out.append(f"A{i}")
            for j in range(self.segments - 2):
                out.append(f"C{i}" if j == 0 else f"C{i}_{j + 1}")
            out.append(f"B{(i + 1) % self.terminals}")
        return out

    def successor(self) -> dict[str, str]:
        ring = self.ring()
        return {cur: nxt for cur, nxt in zip(ring, ring[1:] + ring[:1])}

    def spot_names(self, terminal: int | None = None) -> list[str]:
        terms = range(self.terminals) if terminal is None else [terminal]
        return [f"P{j + 1}_{i}" for i in terms for j in range(self.spots)]

    def kind(self, area: str) -> str:
        return area[0]

    def terminal_of(self, name: str) -> int:
        return int(name.split("_")[-1]) if name.startswith("P") else int(
            name[1:].split("_")[0]
        )


def default_cars(world_spots: int, terminals: int, count: int) -> tuple[CarSpec, ...]:
    """Default placement: first car approaching B, second parked, then one
    per remaining area slot around the ring."""
    slots = ["C0" if terminals >= 1 else "A0"]
    if world_spots >= 1:
        slots.append("P1_0")
    slots += ["A0", "B0", "T0"]
    for i in range(1, terminals):
        slots += [f"C{i}", f"A{i}", f"B{i}", f"T{i}"]
    if count > len(slots):
        raise BadParamsError(f"no default placement for {count} cars")
    return tuple(CarSpec(f"car{i + 1}", slots[i]) for i in range(count))


class _Car:
    __slots__ = ("id", "pos", "dwell", "intent", "last")

    def __init__(self, id: str, pos: str, dwell: int):
        self.id = id
        self.pos = pos
        self.dwell = dwell
        self.intent: str | None = None
        self.last = None  # last occurrence record, run_world only

    def snap(self) -> tuple:
        return (self.id, self.pos, self.dwell, self.intent)


@dataclass(frozen=True)
class SafetyViolation:
    kind: str  # DOUBLE_OCCUPANCY | PRIORITY_BREACH | DWELL_UNDERRUN | LOST_RESERVATION
    tick: int
    cars: tuple[str, ...]
    area: str | None = None

    def __str__(self) -> str:
        where = f" in {self.area}" if self.area else ""
        return f"{self.kind} at tick {self.tick}{where} involving {', '.join(self.cars)}"


class _World:
    """Mutable protocol state, stepped one tick at a time.

    ``chooser(point, labels)`` resolves the two nondeterminism points:
    "park_or_continue" for a car whose stop has elapsed, and "release" for
    every parked car without a departure intent.  Violations of the four
    safety rules are detected at hop time (they only arise under
    mutation) and collected on the instance.
    """

    def __init__(self, world: RailcarWorld):
        self.world = world
        self.succ = world.successor()
        self.occupied: dict[str, str | None] = {a: None for a in world.ring()}
        for s in world.spot_names():
            self.occupied[s] = None
        self.approaching: dict[int, bool] = {i: False for i in range(world.terminals)}
        self.reserved: dict[int, str | None] = {i: None for i in range(world.terminals)}
        self.cars = [
            _Car(c.id, c.position, c.dwell) for c in sorted(world.cars, key=lambda c: c.id)
        ]
        self.entered_t: dict[str, int] = {}
        for car in self.cars:
            self.occupied[car.pos] = car.id
            if car.pos.startswith("T"):
                self.entered_t[car.id] = -car.dwell  # synthetic entry instant
                self.reserved[self.world.terminal_of(car.pos)] = car.id
        self.tick = 0
        self.violations: list[SafetyViolation] = []
        self.mut = world.mutations
        self.emit = lambda event, cause, car=None: None  # run_world installs a recorder

    # area helpers ----------------------------------------------------------

    def _event_suffix(self, area: str) -> str:
        """Clone suffix for C areas beyond the first one of a gap."""
        if "_" in area and area.startswith("C"):
            return f"_{area.split('_')[1]}"
        return ""

    def _enter_guard_ok(self, area: str) -> bool:
        if "no_occupancy_guard" in self.mut:
            return True
        return self.occupied[area] is None

    def _hop_violation_check(self, car: _Car, dest: str):
        holder = self.occupied[dest]
        if holder is not None and holder != car.id:
            self.violations.append(
                SafetyViolation("DOUBLE_OCCUPANCY", self.tick, (holder, car.id), dest)
            )

    # one car, one tick -----------------------------------------------------

    def _act(self, car: _Car, chooser):
        pos = car.pos
        if pos.startswith("P") and not pos.startswith(("PX",)):
            self._act_parked(car, chooser)
        elif pos.startswith("T"):
            self._act_in_terminal(car, chooser)
        elif pos.startswith("B"):
            self._act_in_b(car)
        else:
            self._act_in_run(car)

    def _act_parked(self, car: _Car, chooser):
        term = self.world.terminal_of(car.pos)
        if car.intent != "go":
            if chooser("release", ("stay", "go")) != "go":
                return
            car.intent = "go"
        t_area = f"T{term}"
        blocked_by_approach = self.approaching[term]
        if "no_approaching_block" in self.mut:
            blocked_by_approach = False
        if blocked_by_approach or self.occupied[t_area] is not None:
            return
        if self.approaching[term]:
            self.violations.append(
                SafetyViolation("PRIORITY_BREACH", self.tick, (car.id,), t_area)
            )
        self._hop_violation_check(car, t_area)
        self.occupied[car.pos] = None
        self.occupied[t_area] = car.id
        self.reserved[term] = car.id
        car.pos = t_area
        car.dwell = 0 if "no_dwell" in self.mut else DWELL_TICKS
        car.intent = None
        e15 = self.emit("E15", car.last, car)
        car.last = self.emit("E8", e15, car)
        self.entered_t[car.id] = self.tick

    def _act_in_terminal(self, car: _Car, chooser):
        if car.dwell > 0:
            car.dwell -= 1
            if car.dwell > 0:
                return
        term = self.world.terminal_of(car.pos)
        if car.intent is None:
            labels = ("continue", "park") if self.world.spots else ("continue",)
            car.intent = chooser("park_or_continue", labels) if len(labels) > 1 else "continue"
        if car.intent == "park":
            spot = next(
                (s for s in self.world.spot_names(term) if self.occupied[s] is None), None
            )
            if spot is not None:
                self._leave_terminal(car, term)
                self.occupied[spot] = car.id
                car.pos = spot
                car.intent = None
                e14 = self.emit("E14", car.last, car)
                self.emit("E5", e14, car)
                car.last = e14
                return
            car.intent = "continue"  # both spots taken: carry on instead
        a_area = f"A{term}"
        if not self._enter_guard_ok(a_area):
            return
        self._hop_violation_check(car, a_area)
        self._leave_terminal(car, term)
        self.occupied[a_area] = car.id
        car.pos = a_area
        car.intent = None
        e10 = self.emit("E10", car.last, car)
        self.emit("E5", e10, car)
        car.last = e10

    def _leave_terminal(self, car: _Car, term: int):
        entry = self.entered_t.pop(car.id, None)
        if entry is not None and self.tick - entry < DWELL_TICKS:
            self.violations.append(
                SafetyViolation("DWELL_UNDERRUN", self.tick, (car.id,), f"T{term}")
            )
        self.occupied[car.pos] = None
        if self.reserved[term] == car.id:
            self.reserved[term] = None

    def _act_in_b(self, car: _Car):
        term = self.world.terminal_of(car.pos)
        t_area = f"T{term}"
        if self.occupied[t_area] is not None:
            return
        reserving = "no_reservation" not in self.mut
        e6 = None
        if reserving:
            self.reserved[term] = car.id
            e6 = self.emit("E6", car.last, car)
        else:
            self.reserved[term] = None
        self.occupied[car.pos] = None
        self.approaching[term] = False
        self._hop_violation_check(car, t_area)
        if self.reserved[term] != car.id:
            self.violations.append(
                SafetyViolation("LOST_RESERVATION", self.tick, (car.id,), t_area)
            )
        self.occupied[t_area] = car.id
        self.reserved[term] = car.id
        car.pos = t_area
        car.dwell = 0 if "no_dwell" in self.mut else DWELL_TICKS
        e7 = self.emit("E7", e6 if e6 is not None else car.last, car)
        car.last = self.emit("E8", e7, car)
        self.entered_t[car.id] = self.tick

    def _act_in_run(self, car: _Car):
        nxt = self.succ[car.pos]
        if not self._enter_guard_ok(nxt):
            return
        self._hop_violation_check(car, nxt)
        cur = car.pos
        self.occupied[cur] = None
        self.occupied[nxt] = car.id
        car.pos = nxt
        if cur.startswith("A"):
            e12 = self.emit("E12", car.last, car)
            self.emit("E9", e12, car)
            car.last = e12
        elif cur.startswith("C"):
            suffix = self._event_suffix(cur)
            self.emit(f"E11{suffix}", car.last, car)
        if nxt.startswith("B"):
            term = self.world.terminal_of(nxt)
            self.approaching[term] = True
            e1 = self.emit("E1", car.last, car)
            e2 = self.emit("E2", e1, car)
            if self.world.spots:
                self.emit("E3", e2, car)
            car.last = self.emit("E4", e2, car)
        elif nxt.startswith("C"):
            suffix = self._event_suffix(nxt)
            car.last = self.emit(f"E13{suffix}", car.last, car)

    def init_events(self):
        """Flag initialization: unoccupied is set on every empty T/A/C."""
        for area in self.world.ring():
            if self.occupied[area] is not None:
                continue
            if area.startswith("T"):
                self.emit("E5", None, None)
            elif area.startswith("A"):
                self.emit("E9", None, None)
            elif area.startswith("C"):
                self.emit(f"E11{self._event_suffix(area)}", None, None)

    def step(self, chooser):
        self.tick += 1
        for car in self.cars:
            self._act(car, chooser)

    def snapshot(self) -> tuple:
        return (
            tuple(car.snap() for car in self.cars),
            tuple(sorted((a, c) for a, c in self.occupied.items() if c is not None)),
            tuple(sorted(t for t, v in self.approaching.items() if v)),
            tuple(sorted((t, c) for t, c in self.reserved.items() if c is not None)),
        )

    def restore(self, snap: tuple):
        cars, occupied, approaching, reserved = snap
        for car, (cid, pos, dwell, intent) in zip(self.cars, cars):
            assert car.id == cid
            car.pos, car.dwell, car.intent = pos, dwell, intent
        for a in self.occupied:
            self.occupied[a] = None
        for a, c in occupied:
            self.occupied[a] = c
        for t in self.approaching:
            self.approaching[t] = False
        for t in approaching:
            self.approaching[t] = True
        for t in self.reserved:
            self.reserved[t] = None
        for t, c in reserved:
            self.reserved[t] = c


# ---------------------------------------------------------------------------
# Deterministic multi-car run
# ---------------------------------------------------------------------------

_WORLD_POINTS = ("park_or_continue", "release")


class _OccRec:
    __slots__ = ("event", "at", "cause", "seq", "index")

    def __init__(self, event, at, cause, seq):
        self.event = event
        self.at = at
        self.cause = cause
        self.seq = seq
        self.index = -1


def run_world(
    world: RailcarWorld, config: SimConfig, scripts: tuple[ScriptEntry, ...] = ()
) -> Trace:
    """Step every car once per tick, in car-id order, for max_ticks ticks.

    Choice points: "park_or_continue" (outcomes continue, park) when a
    car's stop has elapsed, and "release" (outcomes stay, go) for each
    parked car each tick.  Scripted outcomes are consumed in consultation
    order; afterwards the configured policy applies (by-priority picks
    the first outcome: continue, stay).
    """
    queues: dict[str, list[str]] = {}
    for entry in scripts:
        if entry.point not in _WORLD_POINTS:
            raise UnknownChoicePointError(f"no choice point named {entry.point!r}")
        queues.setdefault(entry.point, []).extend(entry.outcomes)
    rng = random.Random(config.seed)
    state = _World(world)
    occs: list[_OccRec] = []
    seq = [0]

    def emit(event, cause, car=None):
        rec = _OccRec(event, state.tick, cause, seq[0])
        seq[0] += 1
        occs.append(rec)
        return rec

    state.emit = emit

    def chooser(point: str, labels: tuple[str, ...]) -> str:
        queue = queues.get(point)
        if queue:
            outcome = queue.pop(0)
            if outcome in labels:
                return outcome
        elif config.choice_policy == "seeded-random":
            return rng.choice(list(labels))
        return labels[0]

    state.init_events()
    for _ in range(config.max_ticks):
        state.step(chooser)

    ordered = sorted(occs, key=lambda o: (o.at, o.event, o.seq))
    for idx, rec in enumerate(ordered):
        rec.index = idx
    flags = []
    for area, holder in state.occupied.items():
        flags.append((f"{area}.occupied", "occupied" if holder else "unoccupied"))
    for term, raised in state.approaching.items():
        flags.append((f"B{term}.approaching", "set" if raised else "reset"))
    return Trace(
        seed=config.seed,
        occurrences=tuple(
            Occurrence(
                o.event,
                o.at,
                None if o.cause is None else f"occ:{o.cause.index}",
            )
            for o in ordered
        ),
        flags=tuple(sorted(flags)),
    )


# ---------------------------------------------------------------------------
# Trace safety audit
# ---------------------------------------------------------------------------

_MOVE_EVENTS = ("E1", "E2", "E3", "E4", "E6", "E7", "E8", "E10", "E12", "E14", "E15")


def _is_move(event: str) -> bool:
    return event in _MOVE_EVENTS or event.startswith("E13")


def _expected_first_moves(world: RailcarWorld, pos: str) -> tuple[str, ...]:
    """Event types that can open the chain of a car starting at ``pos``."""
    if pos.startswith("P"):
        return ("E15",)
    if pos.startswith("T"):
        return ("E10", "E14")
    if pos.startswith("B"):
        return ("E6", "E7")  # E7 opens when the reservation was mutated away
    if pos.startswith("A"):
        return ("E12",)
    nxt = world.successor()[pos]
    if nxt.startswith("B"):
        return ("E1",)
    return (f"E13{'_' + nxt.split('_')[1] if '_' in nxt else ''}",)


def check_safety(trace: Trace, world: RailcarWorld) -> list[SafetyViolation]:
    """Scan a trace for the four protocol violations.

    The per-tick world state is rebuilt by walking each car's causal chain
    around the known ring: double occupancy (two cars in one area),
    priority breaches (a parking departure while the terminal's
    approaching flag is up), dwell underruns (under 90 ticks in T), and
    lost reservations (entering T from B without the same-tick
    reservation event).
    """
    occs = trace.occurrences
    owner: dict[int, str] = {}  # occurrence index -> car id
    position: dict[str, str] = {}
    unassigned = {c.id: c.position for c in world.cars}
    violations: list[SafetyViolation] = []

    in_area: dict[str, str | None] = {a: None for a in world.ring()}
    for s in world.spot_names():
        in_area[s] = None
    for car in world.cars:
        in_area[car.position] = car.id
        position[car.id] = car.position
    approach_up: dict[int, bool] = {i: False for i in range(world.terminals)}
    entered_t: dict[str, int] = {
        car.id: -car.dwell for car in world.cars if car.position.startswith("T")
    }
    reserved_now: dict[str, int] = {}  # car -> tick of its E6

    def move_to(car: str, dest: str, tick: int):
        prev = position[car]
        holder = in_area.get(dest)
        if holder is not None and holder != car:
            violations.append(SafetyViolation("DOUBLE_OCCUPANCY", tick, (holder, car), dest))
        if in_area.get(prev) == car:
            in_area[prev] = None
        in_area[dest] = car
        position[car] = dest

    for i, occ in enumerate(occs):
        event, tick = occ.event, occ.at
        if not _is_move(event):
            continue
        if occ.cause is not None and occ.cause.startswith("occ:"):
            j = int(occ.cause.split(":")[1])
            car = owner.get(j)
        else:
            car = None
        if car is None:
            candidates = [
                cid
                for cid, pos in unassigned.items()
                if event in _expected_first_moves(world, pos)
            ]
            if not candidates:
                raise ValueError(
                    f"occurrence #{i} ({event}@{tick}) does not fit any remaining car"
                )
            car = sorted(candidates)[0]
            del unassigned[car]
        owner[i] = car
        pos = position[car]

        if event == "E1":
            dest = world.successor()[pos]
            move_to(car, dest, tick)
            approach_up[world.terminal_of(dest)] = True
        elif event == "E6":
            reserved_now[car] = tick
        elif event == "E7":
            term = world.terminal_of(pos)
            if reserved_now.pop(car, None) != tick:
                violations.append(
                    SafetyViolation("LOST_RESERVATION", tick, (car,), f"T{term}")
                )
            move_to(car, f"T{term}", tick)
            approach_up[term] = False
            entered_t[car] = tick
        elif event == "E10":
            term = world.terminal_of(pos)
            entry = entered_t.pop(car, None)
            if entry is not None and tick - entry < DWELL_TICKS:
                violations.append(SafetyViolation("DWELL_UNDERRUN", tick, (car,), pos))
            move_to(car, f"A{term}", tick)
        elif event == "E12":
            move_to(car, world.successor()[pos], tick)
        elif event.startswith("E13"):
            if not pos.startswith("C"):  # E12 already advanced this hop
                move_to(car, world.successor()[pos], tick)
        elif event == "E14":
            term = world.terminal_of(pos)
            entry = entered_t.pop(car, None)
            if entry is not None and tick - entry < DWELL_TICKS:
                violations.append(SafetyViolation("DWELL_UNDERRUN", tick, (car,), pos))
            spot = next(
                (s for s in world.spot_names(term) if in_area[s] is None), None
            )
            move_to(car, spot or f"P1_{term}", tick)
        elif event == "E15":
            term = world.terminal_of(pos)
            if approach_up[term]:
                violations.append(
                    SafetyViolation("PRIORITY_BREACH", tick, (car,), f"T{term}")
                )
            move_to(car, f"T{term}", tick)
            entered_t[car] = tick
    return violations


# ---------------------------------------------------------------------------
# Bounded exhaustive exploration
# ---------------------------------------------------------------------------


@dataclass
class ExplorationReport:
    states_visited: int
    depth: int
    violations: list[tuple[SafetyViolation, Trace]] = field(default_factory=list)

    @property
    def safe(self) -> bool:
        return not self.violations


def explore(
    world: RailcarWorld,
    depth: int,
    state_cap: int = 1_000_000,
    config: SimConfig | None = None,
) -> ExplorationReport:
    """Breadth-first enumeration of every choice interleaving up to ``depth``
    ticks.

    States are deduplicated by their canonical snapshot, so the search is
    exhaustive over reachable configurations; the first violation found is
    returned with a minimal witness trace (replayed through run_world with
    the branch's choice script).
    """
    if depth < 1:
        raise BadParamsError("depth must be at least 1")
    sim = _World(world)
    initial = sim.snapshot()
    # script prefix (sequence of (point, outcome)) that reaches each state
    frontier: dict[tuple, tuple] = {initial: ()}
    visited = {initial}
    report = ExplorationReport(states_visited=1, depth=0)

    def replay_trace(script: tuple, ticks: int) -> Trace:
        outcomes: dict[str, list[str]] = {"park_or_continue": [], "release": []}
        for point, outcome in script:
            outcomes[point].append(outcome)
        scripts = tuple(
            ScriptEntry(point, tuple(outs)) for point, outs in outcomes.items() if outs
        )
        return run_world(world, SimConfig(seed=0, max_ticks=max(ticks, 1)), scripts)

    for tick in range(1, depth + 1):
        next_frontier: dict[tuple, tuple] = {}
        for snap in sorted(frontier):
            base_script = frontier[snap]
            # discover this state's consultation signature
            sim.restore(snap)
            sim.tick = tick - 1
            sim.violations.clear()
            consultations: list[tuple[str, tuple[str, ...]]] = []

            def probing(point, labels):
                consultations.append((point, labels))
                return labels[0]

            sim.step(probing)
            vectors = (
                itertools.product(*(labels for _, labels in consultations))
                if consultations
                else [()]
            )
            for vector in vectors:
                sim.restore(snap)
                sim.tick = tick - 1
                sim.violations.clear()
                slot = [0]

                def scripted(point, labels, vector=vector):
                    outcome = vector[slot[0]]
                    slot[0] += 1
                    return outcome

                sim.step(scripted)
                step_script = base_script + tuple(
                    (point, outcome)
                    for (point, _), outcome in zip(consultations, vector)
                )
                if sim.violations:
                    witness = replay_trace(step_script, tick)
                    for v in sim.violations:
                        report.violations.append((v, witness))
                    report.depth = tick
                    return report
                new_snap = sim.snapshot()
                if new_snap not in visited:
                    visited.add(new_snap)
                    if len(visited) > state_cap:
                        raise StateBudgetError(
                            f"more than {state_cap} states within {tick} ticks"
                        )
                    next_frontier[new_snap] = step_script
        frontier = next_frontier
        report.states_visited = len(visited)
        report.depth = tick
        if not frontier:
            break
    return report
