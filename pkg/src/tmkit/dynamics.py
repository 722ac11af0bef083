"""Event regions, events, and behavioral models.

A region is a connected piece of a static model where a change can happen.
Joining a region with a time submachine gives an event; the chronology
graph over events is the behavioral model.  None of this mutates the
static model it points into.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .core import (
    ArcRef,
    ElementRef,
    FlagAssign,
    FlagRef,
    Machine,
    StageRef,
    StaticModel,
    element_sort_key,
    guard_flags,
)
from .errors import (
    DisconnectedRegionError,
    DuplicateEventIdError,
    MixedModelsError,
    UnknownEventError,
    UnresolvedElementError,
)


@dataclass(frozen=True)
class EventRegion:
    """A named, connected set of static-model elements with one anchor.

    The anchor is the element whose activation timestamps occurrences of
    the event built on this region.  ``anchor_value`` narrows a flag anchor
    to one assigned value (e.g. fire only when occupied becomes
    "unoccupied"); it is None for stage/arc anchors.
    """

    id: str
    model: StaticModel = field(compare=False, repr=False)
    elements: frozenset[ElementRef] = frozenset()
    anchor: ElementRef | None = None
    anchor_value: str | None = None

    def __post_init__(self):
        if not self.elements:
            raise UnresolvedElementError(f"region {self.id!r} has no elements")
        if self.anchor is None or self.anchor not in self.elements:
            raise UnresolvedElementError(
                f"region {self.id!r}: anchor must be one of the region's elements"
            )
        if self.anchor_value is not None and not isinstance(self.anchor, FlagRef):
            raise UnresolvedElementError(
                f"region {self.id!r}: only flag anchors take a value qualifier"
            )
        universe = self.model.elements()
        for el in self.elements:
            if el not in universe:
                raise UnresolvedElementError(f"region {self.id!r}: unknown element {el}")
        if not _connected(self.elements, self.model):
            raise DisconnectedRegionError(
                f"region {self.id!r}: element set splits into several components"
            )

    def sorted_elements(self) -> list[ElementRef]:
        return sorted(self.elements, key=element_sort_key)


def _touches(el: ArcRef, model: StaticModel) -> set[ElementRef]:
    """Elements structurally incident to an arc: endpoints, assigned flag,
    and any flag its guard reads."""
    touched: set[ElementRef] = {el.src}
    if isinstance(el.dst, FlagAssign):
        touched.add(el.dst.flag)
    else:
        touched.add(el.dst)
    if el.arc_type == "trigger":
        for arc in model.triggers:
            if arc.ref() == el and arc.guard is not None:
                touched.update(guard_flags(arc.guard))
    return touched


def _connected(elements: frozenset[ElementRef], model: StaticModel) -> bool:
    """Weak connectivity of the subgraph induced by the element set.

    Adjacency: an arc touches its endpoint stages and the flags it assigns
    or guards on; stages and flags of the same machine touch each other
    (they share the machine body).
    """
    if len(elements) <= 1:
        return True
    adj: dict[ElementRef, set[ElementRef]] = {el: set() for el in elements}
    by_machine: dict[str, list[ElementRef]] = {}
    for el in elements:
        if isinstance(el, (StageRef, FlagRef)):
            by_machine.setdefault(el.machine, []).append(el)
    for members in by_machine.values():
        for a in members:
            for b in members:
                if a != b:
                    adj[a].add(b)
    for el in elements:
        if not isinstance(el, ArcRef):
            continue
        for other in _touches(el, model):
            if other in adj:
                adj[el].add(other)
                adj[other].add(el)
    seen: set[ElementRef] = set()
    stack = [next(iter(elements))]
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(adj[cur] - seen)
    return len(seen) == len(elements)


def region(
    model: StaticModel,
    region_id: str,
    elements: Iterable[ElementRef],
    anchor: ElementRef,
    anchor_value: str | None = None,
) -> EventRegion:
    """Convenience constructor; validates membership and connectivity."""
    return EventRegion(region_id, model, frozenset(elements), anchor, anchor_value)


@dataclass(frozen=True)
class Event:
    """Region + time: the second-level unit whose occurrences are timestamped.

    The time part is a fresh submachine that receives and processes a
    timestamp; it stays unbound until a simulation stamps occurrences.
    """

    id: str
    region: EventRegion
    time: Machine = field(compare=False)

    @property
    def model(self) -> StaticModel:
        return self.region.model


def mk_event(region: EventRegion, event_id: str, existing: Iterable[Event] = ()) -> Event:
    """Build an event over a region with a fresh time submachine."""
    if any(ev.id == event_id for ev in existing):
        raise DuplicateEventIdError(f"event id {event_id!r} already taken")
    time_machine = Machine(id=f"{event_id}.time", stages=frozenset({"receive", "process"}))
    return Event(event_id, region, time_machine)


@dataclass(frozen=True)
class Edge:
    """Chronology edge with delay bounds in ticks; ``max_delay`` None = unbounded."""

    src: str
    dst: str
    min_delay: int = 0
    max_delay: int | None = None


@dataclass(frozen=True)
class BehavioralModel:
    id: str
    events: tuple[Event, ...]
    edges: tuple[Edge, ...]
    starts: frozenset[str] = frozenset()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.src, e.dst))))

    def event_ids(self) -> set[str]:
        return {e.id for e in self.events}

    def edge_map(self) -> dict[tuple[str, str], Edge]:
        cached = self.__dict__.get("_edge_map")
        if cached is None:
            cached = {(e.src, e.dst): e for e in self.edges}
            object.__setattr__(self, "_edge_map", cached)
        return cached


def default_starts(events: Iterable[Event]) -> frozenset[str]:
    """Events whose region contains a boundary transfer stage.

    Behaviors begin with an external arrival, so any region touching a
    transfer stage open to the outside marks a legal chain start.
    """
    starts = set()
    for ev in events:
        boundary = ev.model.boundary_transfers()
        if any(isinstance(el, StageRef) and el in boundary for el in ev.region.elements):
            starts.add(ev.id)
    return frozenset(starts)


def build_behavior(
    behavior_id: str,
    events: Iterable[Event],
    edges: Iterable[Edge | tuple],
    starts: Iterable[str] | None = None,
) -> BehavioralModel:
    """Validate and assemble the chronology graph.

    Edges may be Edge instances or (src, dst[, min, max]) tuples.  Start
    events default to the boundary rule (see :func:`default_starts`) and
    may be overridden.  Events unreachable from any start are reported as
    warnings, not errors: cycles and isolated events are legal.
    """
    events = list(events)
    ids = [e.id for e in events]
    for eid in ids:
        if ids.count(eid) > 1:
            raise DuplicateEventIdError(f"event id {eid!r} declared twice")
    known = set(ids)

    built: list[Edge] = []
    for e in edges:
        if not isinstance(e, Edge):
            e = Edge(*e)
        if e.src not in known or e.dst not in known:
            raise UnknownEventError(f"edge {e.src}->{e.dst} references an undeclared event")
        if e.min_delay < 0 or (e.max_delay is not None and e.max_delay < e.min_delay):
            raise ValueError(f"edge {e.src}->{e.dst}: need 0 <= min <= max")
        built.append(e)

    if starts is None:
        start_set = default_starts(events)
    else:
        start_set = frozenset(starts)
        unknown = start_set - known
        if unknown:
            raise UnknownEventError(f"start events not declared: {sorted(unknown)}")

    succ: dict[str, set[str]] = {}
    for e in built:
        succ.setdefault(e.src, set()).add(e.dst)
    reached = set(start_set)
    frontier = list(start_set)
    while frontier:
        cur = frontier.pop()
        for nxt in succ.get(cur, ()):
            if nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    warnings = tuple(
        f"event {eid} unreachable from any start event"
        for eid in sorted(known - reached)
        if start_set  # with no starts at all, reachability is vacuous
    )
    return BehavioralModel(behavior_id, tuple(events), tuple(built), start_set, warnings)


def static_of(behavior: BehavioralModel) -> StaticModel | None:
    """The unique static model a behavior is anchored to.

    Returns None for an empty behavior (not anchored anywhere); raises
    :class:`MixedModelsError` if events point into different models.
    """
    models = []
    for ev in behavior.events:
        if not any(ev.model is m for m in models):
            models.append(ev.model)
    if not models:
        return None
    if len(models) > 1:
        raise MixedModelsError(
            f"behavior {behavior.id!r} spans {len(models)} different static models"
        )
    return models[0]


@dataclass
class CoverageReport:
    covered: set[ElementRef]
    uncovered: set[ElementRef]
    overlaps: dict[ElementRef, list[str]]

    @property
    def complete(self) -> bool:
        return not self.uncovered


def coverage(model: StaticModel, regions: Iterable[EventRegion]) -> CoverageReport:
    """Which model elements the regions cover, miss, and share.

    Overlapping regions are legal and merely reported.  The universe is
    the model's stages, arcs, and flags.
    """
    universe = model.elements()
    claimed: dict[ElementRef, list[str]] = {}
    for reg in regions:
        for el in reg.elements:
            if el not in universe:
                raise UnresolvedElementError(f"region {reg.id!r}: unknown element {el}")
            claimed.setdefault(el, []).append(reg.id)
    covered = set(claimed)
    overlaps = {el: sorted(ids) for el, ids in claimed.items() if len(ids) > 1}
    return CoverageReport(covered, universe - covered, overlaps)
