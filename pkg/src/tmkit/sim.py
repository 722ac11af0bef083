"""Deterministic discrete-event execution and trace conformance.

Execution semantics
-------------------
Time advances in integer ticks.  At each tick, stimuli due now enter their
boundary transfer stages; then a cascade runs: trigger arcs whose source
activated fire (guards permitting) and every thing advances one flow arc
per cascade step, until the tick is quiescent.  The cascade step count is
bounded; a trigger cycle raises CASCADE_OVERFLOW instead of hanging.

An occurrence is recorded whenever a region's anchor element activates:

* stage anchors fire when a thing enters the stage (stimulus, flow move,
  or trigger-driven birth) -- a trigger that merely enables a stage does
  not fire its anchor;
* arc anchors fire when the flow arc is traversed or the trigger fires;
* flag anchors fire when an assignment lands on the flag (optionally only
  for one assigned value).

Causality travels with things: each thing remembers the last occurrence
on its path, and new occurrences point back at it.  Equal inputs produce
byte-identical traces.

Storage convention: on a machine that owns a storage, the create stage
withdraws one unit per birth (floored at zero) and the receive stage
deposits one unit per arriving thing, consuming it.

Edges with a positive minimum delay gate thing movement: a move whose
prospective occurrence would land before the minimum has elapsed waits
for a later tick.  Trigger firings are never delayed across ticks.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import (
    And,
    ArcRef,
    FlagAssign,
    FlagIs,
    FlagRef,
    LevelTest,
    Not,
    Or,
    StageRef,
    StaticModel,
    find_stage,
    validate_static,
)
from .dynamics import BehavioralModel, static_of
from .errors import (
    CascadeOverflowError,
    StimulusTargetError,
    UnknownChoicePointError,
)

import random


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Thing:
    """A token moving through the model."""

    id: str
    payload: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Stimulus:
    """External arrival: ``thing`` enters ``target`` (a boundary transfer)
    at tick ``at``."""

    at: int
    target: str
    thing: Thing = Thing("stimulus")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    max_ticks: int = 100
    cascade_limit: int = 1000
    choice_policy: str = "by-priority"  # or "seeded-random"

    def __post_init__(self):
        if self.max_ticks < 1 or self.cascade_limit < 1:
            raise ValueError("max_ticks and cascade_limit must be positive")
        if self.choice_policy not in ("by-priority", "seeded-random"):
            raise ValueError(f"unknown choice policy {self.choice_policy!r}")


@dataclass(frozen=True)
class ScriptEntry:
    point: str
    outcomes: tuple[str, ...]


def script_choice(point: str, outcomes: Iterable[str]) -> ScriptEntry:
    """Pin a deterministic outcome sequence for a named choice point.

    Unscripted points (and exhausted scripts) fall back to the configured
    choice policy.  Unknown point names are rejected when the script is
    handed to a run.
    """
    return ScriptEntry(point, tuple(outcomes))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Occurrence:
    """One timestamped event activation.

    ``cause`` is "occ:<i>" (index of the causing occurrence in the trace),
    "stim:<i>" (index of the causing stimulus), or None for occurrences
    with no recorded provenance.
    """

    event: str
    at: int
    cause: str | None = None


@dataclass(frozen=True)
class Trace:
    seed: int
    occurrences: tuple[Occurrence, ...] = ()
    flags: tuple[tuple[str, str], ...] = ()

    def flag_map(self) -> dict[str, str]:
        return dict(self.flags)


def trace_to_json(trace: Trace) -> str:
    """Canonical JSON form: keys seed, occurrences, flags, in that order."""
    doc = {
        "seed": trace.seed,
        "occurrences": [
            {"event": o.event, "at": o.at, "cause": o.cause} for o in trace.occurrences
        ],
        "flags": {k: v for k, v in sorted(trace.flags)},
    }
    return json.dumps(doc, indent=2) + "\n"


def trace_from_json(text: str) -> Trace:
    doc = json.loads(text)
    return Trace(
        seed=doc["seed"],
        occurrences=tuple(
            Occurrence(o["event"], o["at"], o.get("cause")) for o in doc["occurrences"]
        ),
        flags=tuple(sorted(doc.get("flags", {}).items())),
    )


# ---------------------------------------------------------------------------
# Engine internals
# ---------------------------------------------------------------------------


class _Occ:
    __slots__ = ("event", "at", "cause", "seq", "index")

    def __init__(self, event: str, at: int, cause, seq: int):
        self.event = event
        self.at = at
        self.cause = cause  # _Occ | ("stim", i) | None
        self.seq = seq
        self.index = -1


class _Token:
    __slots__ = ("id", "at", "direction", "tag", "payload", "choice_cache", "blocked")

    def __init__(self, tid: str, at: StageRef, direction: str | None, tag, payload=()):
        self.id = tid
        self.at = at
        self.direction = direction  # "in" | "out" | None
        self.tag = tag  # _Occ | ("stim", i) | None
        self.payload = payload
        self.choice_cache: dict[StageRef, str] = {}
        self.blocked = False


def _eval_guard(guard, flags, storages) -> bool:
    if isinstance(guard, FlagIs):
        return flags.get(guard.flag) == guard.value
    if isinstance(guard, LevelTest):
        level = storages.get(guard.storage, 0)
        return level >= guard.bound if guard.op == ">=" else level < guard.bound
    if isinstance(guard, Not):
        return not _eval_guard(guard.operand, flags, storages)
    if isinstance(guard, And):
        return _eval_guard(guard.left, flags, storages) and _eval_guard(
            guard.right, flags, storages
        )
    if isinstance(guard, Or):
        return _eval_guard(guard.left, flags, storages) or _eval_guard(
            guard.right, flags, storages
        )
    raise TypeError(f"not a guard: {guard!r}")


class _Sim:
    def __init__(
        self,
        static: StaticModel,
        behavior: BehavioralModel,
        config: SimConfig,
        stimuli: Sequence[Stimulus],
        scripts: Sequence[ScriptEntry],
    ):
        self.static = static
        self.behavior = behavior
        self.config = config
        self.rng = random.Random(config.seed)

        self.out_flows: dict[StageRef, list] = {}
        for arc in static.flows:
            self.out_flows.setdefault(arc.src, []).append(arc)
        for arcs in self.out_flows.values():
            arcs.sort(key=lambda a: a.dst)

        self.triggers_by_src: dict[StageRef, list] = {}
        for trig in static.triggers:
            self.triggers_by_src.setdefault(trig.src, []).append(trig)

        self.choice_by_stage = {c.stage: c for c in static.choices}
        self.boundary = static.boundary_transfers()

        # anchors: element -> [(event id, required flag value or None)]
        self.stage_anchors: dict[StageRef, list[str]] = {}
        self.arc_anchors: dict[ArcRef, list[str]] = {}
        self.flag_anchors: dict[FlagRef, list[tuple[str | None, str]]] = {}
        for ev in behavior.events:
            anchor = ev.region.anchor
            if isinstance(anchor, StageRef):
                self.stage_anchors.setdefault(anchor, []).append(ev.id)
            elif isinstance(anchor, ArcRef):
                self.arc_anchors.setdefault(anchor, []).append(ev.id)
            else:
                self.flag_anchors.setdefault(anchor, []).append(
                    (ev.region.anchor_value, ev.id)
                )
        self.edge_map = behavior.edge_map()

        self.flags = {fr: f.initial for fr, f in static.flag_refs().items()}
        self.storages = {sid: s.level for sid, s in static.storage_refs().items()}
        self.caps = {sid: s.capacity for sid, s in static.storage_refs().items()}
        # first storage per machine backs the create/receive convention
        self.machine_storage: dict[str, str] = {}
        for sid in sorted(self.storages):
            machine = sid.split(".", 1)[0]
            self.machine_storage.setdefault(machine, sid)

        valid_points = {c.name for c in static.choices}
        for stage, arcs in self.out_flows.items():
            if len(arcs) > 1 and stage not in self.choice_by_stage:
                valid_points.add(str(stage))
        self.scripts: dict[str, deque[str]] = {}
        for entry in scripts:
            if entry.point not in valid_points:
                raise UnknownChoicePointError(f"no choice point named {entry.point!r}")
            self.scripts.setdefault(entry.point, deque()).extend(entry.outcomes)

        self.stimuli = stimuli
        self.tokens: dict[str, _Token] = {}
        self.occs: list[_Occ] = []
        self.seq = 0
        self.births = 0
        self.tick = 0
        self.queue: deque = deque()  # pending stage activations (stage, tag, token|None)

    # -- occurrence plumbing -------------------------------------------------

    def _record(self, event_id: str, cause) -> _Occ:
        occ = _Occ(event_id, self.tick, cause, self.seq)
        self.seq += 1
        self.occs.append(occ)
        return occ

    def _resolve_choice(self, name: str, labels: tuple[str, ...]) -> str:
        queue = self.scripts.get(name)
        if queue:
            outcome = queue.popleft()
            if outcome in labels:
                return outcome
            return labels[0]
        if self.config.choice_policy == "seeded-random":
            return self.rng.choice(list(labels))
        return labels[0]

    # -- token lifecycle -----------------------------------------------------

    def _enter(self, token: _Token, via: ArcRef | None):
        """Record anchor occurrences for an entry and schedule triggers."""
        if via is not None:
            for ev in self.arc_anchors.get(via, ()):
                token.tag = self._record(ev, token.tag)
        for ev in self.stage_anchors.get(token.at, ()):
            token.tag = self._record(ev, token.tag)
        self.queue.append((token.at, token.tag, token))
        stage = token.at
        if stage.kind == "receive":
            sid = self.machine_storage.get(stage.machine)
            if sid is not None:
                cap = self.caps[sid]
                level = self.storages[sid] + 1
                self.storages[sid] = level if cap is None else min(level, cap)
                del self.tokens[token.id]  # deposited

    def _birth(self, stage: StageRef, tag, payload=()):
        sid = self.machine_storage.get(stage.machine)
        if stage.kind == "create" and sid is not None:
            self.storages[sid] = max(self.storages[sid] - 1, 0)
        tid = f"t{self.births}"
        self.births += 1
        token = _Token(tid, stage, None, tag, payload)
        if stage.kind == "transfer":
            token.direction = "in"
        self.tokens[tid] = token
        self._enter(token, None)

    # -- cascade -------------------------------------------------------------

    def _fire_triggers(self, stage: StageRef, tag, token: _Token | None):
        trigs = self.triggers_by_src.get(stage, ())
        if not trigs:
            return
        choice = self.choice_by_stage.get(stage)
        chosen_targets: set[StageRef] | None = None
        if choice is not None:
            governed = {t.dst for t in trigs if isinstance(t.dst, StageRef)}
            governed &= {target for _, target in choice.outcomes}
            if governed:
                label = self._choice_label(choice, token)
                chosen_targets = {
                    target for lab, target in choice.outcomes if lab == label
                }
        for trig in trigs:
            if (
                chosen_targets is not None
                and isinstance(trig.dst, StageRef)
                and trig.dst in {target for _, target in choice.outcomes}
                and trig.dst not in chosen_targets
            ):
                continue
            if trig.guard is not None and not _eval_guard(
                trig.guard, self.flags, self.storages
            ):
                continue
            if isinstance(trig.dst, FlagAssign):
                self.flags[trig.dst.flag] = trig.dst.value
                arc_tag = tag
                for ev in self.arc_anchors.get(trig.ref(), ()):
                    arc_tag = self._record(ev, arc_tag)
                for value, ev in self.flag_anchors.get(trig.dst.flag, ()):
                    if value is None or value == trig.dst.value:
                        self._record(ev, arc_tag)
            else:
                arc_tag = tag
                for ev in self.arc_anchors.get(trig.ref(), ()):
                    arc_tag = self._record(ev, arc_tag)
                if trig.dst.kind == "create" or trig.payload is not None:
                    self._birth(trig.dst, arc_tag, ((("carries", trig.payload),) if trig.payload else ()))
                else:
                    # pure enablement: downstream triggers may cascade,
                    # but no anchor fires
                    self.queue.append((trig.dst, arc_tag, None))

    def _choice_label(self, choice, token: _Token | None) -> str:
        if token is not None:
            cached = token.choice_cache.get(choice.stage)
            if cached is not None:
                return cached
        label = self._resolve_choice(choice.name, choice.labels())
        if token is not None:
            token.choice_cache[choice.stage] = label
        return label

    def _gated(self, token: _Token, arc) -> bool:
        """True when a minimum edge delay forbids this move at this tick."""
        tag = token.tag
        if not isinstance(tag, _Occ):
            return False
        prospective = list(self.arc_anchors.get(arc.ref(), ()))
        prospective += self.stage_anchors.get(arc.dst, ())
        for ev in prospective:
            edge = self.edge_map.get((tag.event, ev))
            if edge is not None and (self.tick - tag.at) < edge.min_delay:
                return True
        return False

    def _move(self, token: _Token) -> bool:
        stage = token.at
        arcs = self.out_flows.get(stage, ())
        if stage.kind == "transfer":
            if token.direction == "in":
                arcs = [a for a in arcs if a.dst.machine == stage.machine]
            else:
                arcs = [a for a in arcs if a.dst.machine != stage.machine]
                if not arcs:
                    del self.tokens[token.id]  # leaves the model
                    return True
        if not arcs:
            return False
        if len(arcs) == 1:
            arc = arcs[0]
        else:
            choice = self.choice_by_stage.get(stage)
            if choice is not None:
                label = self._choice_label(choice, token)
                wanted = [target for lab, target in choice.outcomes if lab == label]
                picks = [a for a in arcs if a.dst in wanted]
                arc = picks[0] if picks else arcs[0]
            else:
                # implicit choice point named by the stage path
                labels = tuple(str(a.dst) for a in arcs)
                label = self._resolve_choice(str(stage), labels)
                arc = next((a for a in arcs if str(a.dst) == label), arcs[0])
        if self._gated(token, arc):
            return False
        token.choice_cache.pop(stage, None)
        token.at = arc.dst
        if arc.dst.kind == "transfer":
            token.direction = "out" if arc.src.machine == arc.dst.machine else "in"
        else:
            token.direction = None
        self._enter(token, arc.ref())
        return True

    # -- main loop -----------------------------------------------------------

    def run(self) -> Trace:
        targets = {}
        for i, st in enumerate(self.stimuli):
            if st.at < 0:
                raise ValueError(f"stimulus #{i}: tick must be non-negative")
            target = find_stage(self.static, st.target)
            if target is None or target not in self.boundary:
                raise StimulusTargetError(
                    f"stimulus target {st.target!r} is not a boundary transfer stage"
                )
            targets[i] = target
        pending = sorted(
            range(len(self.stimuli)),
            key=lambda i: (self.stimuli[i].at, self.stimuli[i].target, i),
        )
        injected = 0
        for self.tick in range(self.config.max_ticks + 1):
            while injected < len(pending) and self.stimuli[pending[injected]].at == self.tick:
                i = pending[injected]
                st = self.stimuli[i]
                token = _Token(f"s{i}", targets[i], "in", ("stim", i), st.thing.payload)
                self.tokens[token.id] = token
                self._enter(token, None)
                injected += 1
            steps = 0
            while True:
                steps += 1
                if steps > self.config.cascade_limit:
                    raise CascadeOverflowError(
                        f"cascade exceeded {self.config.cascade_limit} steps at tick {self.tick}"
                    )
                wave, self.queue = self.queue, deque()
                for stage, tag, token in wave:
                    self._fire_triggers(stage, tag, token)
                moved = False
                for tid in sorted(self.tokens):
                    token = self.tokens.get(tid)
                    if token is not None and self._move(token):
                        moved = True
                if not self.queue and not moved:
                    break
            if injected >= len(pending) and not self.tokens:
                break
        ordered = sorted(self.occs, key=lambda o: (o.at, o.event, o.seq))
        for idx, occ in enumerate(ordered):
            occ.index = idx

        def cause_ref(c):
            if c is None:
                return None
            if isinstance(c, _Occ):
                return f"occ:{c.index}"
            return f"stim:{c[1]}"

        return Trace(
            seed=self.config.seed,
            occurrences=tuple(
                Occurrence(o.event, o.at, cause_ref(o.cause)) for o in ordered
            ),
            flags=tuple(sorted((str(fr), v) for fr, v in self.flags.items())),
        )


def simulate(
    static: StaticModel,
    behavior: BehavioralModel,
    config: SimConfig,
    stimuli: Sequence[Stimulus] = (),
    scripts: Sequence[ScriptEntry] = (),
) -> Trace:
    """Run the model deterministically and return the trace.

    The static model must validate cleanly and the behavior must be
    anchored to it.  Identical inputs (model, behavior, config, stimuli,
    scripts) yield byte-identical traces.
    """
    report = validate_static(static)
    if not report.ok:
        raise ValueError(f"static model does not validate: {report.findings[0]}")
    anchored = static_of(behavior)
    if anchored is not None and anchored is not static:
        raise ValueError("behavior is anchored to a different static model")
    return _Sim(static, behavior, config, stimuli, scripts).run()


# ---------------------------------------------------------------------------
# Conformance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceViolation:
    kind: str
    index: int
    message: str


@dataclass(frozen=True)
class Verdict:
    conforms: bool
    violations: tuple[TraceViolation, ...] = ()


def check_trace(trace: Trace, behavior: BehavioralModel) -> Verdict:
    """Check a trace against the chronology graph and its time rules.

    Occurrence order alone is not acceptance: an occurrence caused by a
    prior occurrence must sit on a behavior edge whose delay bounds contain
    the tick gap; stimulus-rooted occurrences must be start events.  An
    occurrence without recorded provenance opens a new chain, but when the
    immediately preceding occurrence connects to it by an edge the gap is
    still held to that edge's bounds (so hand-written sequential traces
    are checked the natural way).
    """
    violations: list[TraceViolation] = []
    known = behavior.event_ids()
    edges = behavior.edge_map()
    occs = trace.occurrences

    def bounds_check(i: int, src_occ: Occurrence, dst_occ: Occurrence, edge):
        gap = dst_occ.at - src_occ.at
        if gap < edge.min_delay:
            violations.append(
                TraceViolation(
                    "DELAY_UNDERRUN",
                    i,
                    f"{edge.src}->{edge.dst} after {gap} ticks, minimum {edge.min_delay}",
                )
            )
        elif edge.max_delay is not None and gap > edge.max_delay:
            violations.append(
                TraceViolation(
                    "DELAY_EXCEEDED",
                    i,
                    f"{edge.src}->{edge.dst} after {gap} ticks, maximum {edge.max_delay}",
                )
            )

    prev_at = None
    for i, occ in enumerate(occs):
        if occ.event not in known:
            violations.append(
                TraceViolation("UNKNOWN_EVENT", i, f"event {occ.event!r} not in behavior")
            )
            continue
        if prev_at is not None and occ.at < prev_at:
            violations.append(
                TraceViolation("TIME_REGRESSION", i, f"tick {occ.at} after {prev_at}")
            )
        prev_at = occ.at

        cause = occ.cause
        if cause is None:
            if i > 0:
                prev = occs[i - 1]
                edge = edges.get((prev.event, occ.event))
                if edge is not None:
                    bounds_check(i, prev, occ, edge)
            continue
        if cause.startswith("stim:"):
            if occ.event not in behavior.starts:
                violations.append(
                    TraceViolation(
                        "NOT_A_START",
                        i,
                        f"stimulus-rooted {occ.event} is not a start event",
                    )
                )
            continue
        if cause.startswith("occ:"):
            try:
                j = int(cause.split(":", 1)[1])
                src_occ = occs[j]
            except (ValueError, IndexError):
                violations.append(TraceViolation("BAD_CAUSE", i, f"cause {cause!r} unresolvable"))
                continue
            edge = edges.get((src_occ.event, occ.event))
            if edge is not None:
                bounds_check(i, src_occ, occ, edge)
            elif occ.event not in behavior.starts:
                violations.append(
                    TraceViolation(
                        "NOT_AN_EDGE",
                        i,
                        f"{src_occ.event}->{occ.event} is not a behavior edge",
                    )
                )
            continue
        violations.append(TraceViolation("BAD_CAUSE", i, f"cause {cause!r} unresolvable"))

    return Verdict(not violations, tuple(violations))
