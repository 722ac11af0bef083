"""Static model types and structural validation.

A static model is a timeless description: machines built from the five
generic stages (create, process, release, transfer, receive), solid flow
arcs moving things between stages, and dashed trigger arcs that activate a
stage or assign a flag value, optionally guarded by flag/storage tests.
No field anywhere in this module holds a time value; time enters only at
the event level (see :mod:`tmkit.dynamics`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import AmbiguousPathError

KINDS = ("create", "process", "release", "transfer", "receive")

# Legal intra-machine flow steps. Inter-machine flows are transfer->transfer
# only. Everything else is rejected by validate_static.
INTRA_WHITELIST = frozenset(
    {
        ("transfer", "receive"),
        ("receive", "process"),
        ("receive", "release"),
        ("create", "process"),
        ("create", "release"),
        ("process", "release"),
        ("release", "transfer"),
    }
)


# ---------------------------------------------------------------------------
# Element references
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class StageRef:
    """A stage addressed as (owning machine id, stage kind)."""

    machine: str
    kind: str

    def __str__(self) -> str:
        return f"{self.machine}.{self.kind}"


@dataclass(frozen=True, order=True)
class FlagRef:
    machine: str
    flag: str

    def __str__(self) -> str:
        return f"{self.machine}.{self.flag}"


@dataclass(frozen=True, order=True)
class FlagAssign:
    """Trigger target that writes ``value`` into a flag."""

    flag: FlagRef
    value: str

    def __str__(self) -> str:
        return f"{self.flag} = {self.value}"


@dataclass(frozen=True, order=True)
class ArcRef:
    """Reference to one arc: ``arc_type`` is "flow" or "trigger"."""

    arc_type: str
    src: StageRef
    dst: StageRef | FlagAssign

    def __str__(self) -> str:
        return f"{self.arc_type} {self.src} -> {self.dst}"


ElementRef = StageRef | FlagRef | ArcRef


def element_sort_key(el: ElementRef) -> tuple:
    rank = {StageRef: 0, FlagRef: 1, ArcRef: 2}[type(el)]
    return (rank, str(el))


# ---------------------------------------------------------------------------
# Guards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlagIs:
    flag: FlagRef
    value: str

    def __str__(self) -> str:
        return f"{self.flag} == {self.value}"


@dataclass(frozen=True)
class LevelTest:
    """Storage-level comparison: op is ">=" or "<"."""

    storage: str  # "Machine.storage"
    op: str
    bound: int

    def __str__(self) -> str:
        return f"{self.storage} {self.op} {self.bound}"


@dataclass(frozen=True)
class Not:
    operand: "Guard"

    def __str__(self) -> str:
        return f"not {_wrap(self.operand)}"


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"

    def __str__(self) -> str:
        return f"{_wrap(self.left)} and {_wrap(self.right)}"


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"

    def __str__(self) -> str:
        return f"{_wrap(self.left)} or {_wrap(self.right)}"


Guard = FlagIs | LevelTest | Not | And | Or


def _wrap(g: Guard) -> str:
    if isinstance(g, (FlagIs, LevelTest, Not)):
        return str(g)
    return f"({g})"


def guard_flags(g: Guard) -> set[FlagRef]:
    """All flag references appearing in a guard expression."""
    if isinstance(g, FlagIs):
        return {g.flag}
    if isinstance(g, LevelTest):
        return set()
    if isinstance(g, Not):
        return guard_flags(g.operand)
    return guard_flags(g.left) | guard_flags(g.right)


def guard_storages(g: Guard) -> set[str]:
    if isinstance(g, LevelTest):
        return {g.storage}
    if isinstance(g, FlagIs):
        return set()
    if isinstance(g, Not):
        return guard_storages(g.operand)
    return guard_storages(g.left) | guard_storages(g.right)


# ---------------------------------------------------------------------------
# Model parts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Flag:
    """Finite-valued variable owned by a machine; written only by triggers."""

    id: str
    values: tuple[str, ...]
    initial: str


@dataclass(frozen=True)
class Storage:
    """Counted buffer. ``capacity`` of None means unbounded."""

    id: str
    capacity: int | None
    level: int = 0


@dataclass(frozen=True)
class Machine:
    """One node of the machine tree.

    ``stages`` holds the kinds present (at most one stage per kind).  A
    machine may be a pure container (no stages) grouping submachines.
    """

    id: str
    stages: frozenset[str] = frozenset()
    flags: tuple[Flag, ...] = ()
    storages: tuple[Storage, ...] = ()
    submachines: tuple["Machine", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(sorted(self.flags, key=lambda f: f.id)))
        object.__setattr__(self, "storages", tuple(sorted(self.storages, key=lambda s: s.id)))
        object.__setattr__(self, "submachines", tuple(sorted(self.submachines, key=lambda m: m.id)))

    def walk(self):
        yield self
        for sub in self.submachines:
            yield from sub.walk()


@dataclass(frozen=True)
class FlowArc:
    src: StageRef
    dst: StageRef

    def ref(self) -> ArcRef:
        return ArcRef("flow", self.src, self.dst)

    def __str__(self) -> str:
        return f"flow {self.src} -> {self.dst}"


@dataclass(frozen=True)
class TriggerArc:
    """Dashed arc: activates a stage or assigns a flag when ``src`` activates.

    ``payload`` names a thing the trigger injects at a stage target; the
    built-in case studies leave it unset.
    """

    src: StageRef
    dst: StageRef | FlagAssign
    guard: Guard | None = None
    payload: str | None = None

    def ref(self) -> ArcRef:
        return ArcRef("trigger", self.src, self.dst)

    def __str__(self) -> str:
        return f"trigger {self.src} -> {self.dst}"


@dataclass(frozen=True)
class Choice:
    """Named nondeterminism point at a stage.

    Each outcome label selects the outgoing arc(s) toward its target stage.
    Labels may repeat; resolution picks the first target in declaration
    order that is usable.
    """

    name: str
    stage: StageRef
    outcomes: tuple[tuple[str, StageRef], ...]

    def labels(self) -> tuple[str, ...]:
        seen: list[str] = []
        for label, _ in self.outcomes:
            if label not in seen:
                seen.append(label)
        return tuple(seen)


@dataclass(frozen=True)
class StaticModel:
    """Root machines plus the arc sets. Immutable after construction."""

    machines: tuple[Machine, ...] = ()
    flows: tuple[FlowArc, ...] = ()
    triggers: tuple[TriggerArc, ...] = ()
    choices: tuple[Choice, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "machines", tuple(sorted(self.machines, key=lambda m: m.id)))
        object.__setattr__(
            self, "flows", tuple(sorted(self.flows, key=lambda a: (a.src, a.dst)))
        )
        object.__setattr__(
            self, "triggers", tuple(sorted(self.triggers, key=lambda a: (a.src, str(a.dst), str(a.guard))))
        )
        object.__setattr__(
            self, "choices", tuple(sorted(self.choices, key=lambda c: (c.name, c.stage)))
        )

    # -- indexes (computed lazily, cached on the instance) ------------------

    def all_machines(self) -> dict[str, Machine]:
        cached = self.__dict__.get("_machines_by_id")
        if cached is None:
            cached = {}
            for root in self.machines:
                for m in root.walk():
                    cached.setdefault(m.id, m)
            object.__setattr__(self, "_machines_by_id", cached)
        return cached

    def machine_paths(self) -> dict[str, tuple[str, ...]]:
        """Machine id -> path of ids from the root down to it."""
        cached = self.__dict__.get("_machine_paths")
        if cached is None:
            cached = {}

            def visit(m: Machine, prefix: tuple[str, ...]):
                path = prefix + (m.id,)
                cached.setdefault(m.id, path)
                for sub in m.submachines:
                    visit(sub, path)

            for root in self.machines:
                visit(root, ())
            object.__setattr__(self, "_machine_paths", cached)
        return cached

    def stages(self) -> set[StageRef]:
        cached = self.__dict__.get("_stages")
        if cached is None:
            cached = {
                StageRef(m.id, kind)
                for m in self.all_machines().values()
                for kind in m.stages
            }
            object.__setattr__(self, "_stages", cached)
        return cached

    def flag_refs(self) -> dict[FlagRef, Flag]:
        cached = self.__dict__.get("_flag_refs")
        if cached is None:
            cached = {
                FlagRef(m.id, f.id): f
                for m in self.all_machines().values()
                for f in m.flags
            }
            object.__setattr__(self, "_flag_refs", cached)
        return cached

    def storage_refs(self) -> dict[str, Storage]:
        cached = self.__dict__.get("_storage_refs")
        if cached is None:
            cached = {
                f"{m.id}.{s.id}": s
                for m in self.all_machines().values()
                for s in m.storages
            }
            object.__setattr__(self, "_storage_refs", cached)
        return cached

    def elements(self) -> set[ElementRef]:
        """The coverage universe: stages, arcs, and flags.

        Storages are attached state, not referenceable region elements.
        """
        els: set[ElementRef] = set(self.stages())
        els.update(a.ref() for a in self.flows)
        els.update(a.ref() for a in self.triggers)
        els.update(self.flag_refs())
        return els

    def boundary_transfers(self) -> set[StageRef]:
        """Transfer stages with no incoming inter-machine flow arc.

        These are the points where the outside world may inject things.
        """
        inter_dsts = {
            a.dst for a in self.flows if a.src.machine != a.dst.machine
        }
        return {
            s for s in self.stages() if s.kind == "transfer" and s not in inter_dsts
        }

    def structural_key(self) -> tuple:
        """Hashable identity used to detect accidental mutation."""
        return (self.machines, self.flows, self.triggers, self.choices)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Finding:
    severity: str  # "fatal" | "warning"
    rule: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity.upper()} {self.rule} {self.location} {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(f.severity == "fatal" for f in self.findings)

    def __iter__(self):
        return iter(self.findings)


def validate_static(model: StaticModel) -> ValidationReport:
    """Check every structural invariant; returns a deterministic report.

    The finding set does not depend on declaration order: findings are
    sorted by (rule, location, message).
    """
    findings: set[Finding] = set()

    def fatal(rule: str, location: str, message: str):
        findings.add(Finding("fatal", rule, location, message))

    # machine ids unique model-wide
    seen: dict[str, int] = {}
    for root in model.machines:
        for m in root.walk():
            seen[m.id] = seen.get(m.id, 0) + 1
    for mid, n in seen.items():
        if n > 1:
            fatal("DUPLICATE_ID", mid, f"machine id declared {n} times")

    machines = model.all_machines()
    stages = model.stages()
    flag_refs = model.flag_refs()
    storage_refs = model.storage_refs()

    for m in machines.values():
        for kind in m.stages:
            if kind not in KINDS:
                fatal("UNKNOWN_STAGE", f"{m.id}.{kind}", "not one of the five stage kinds")
        flag_ids = [f.id for f in m.flags]
        for fid in flag_ids:
            if flag_ids.count(fid) > 1:
                fatal("DUPLICATE_ID", f"{m.id}.{fid}", "flag id declared twice in one machine")
        for f in m.flags:
            if len(set(f.values)) < 2:
                fatal("FLAG_DOMAIN", f"{m.id}.{f.id}", "a flag needs at least two values")
            if f.initial not in f.values:
                fatal("FLAG_DOMAIN", f"{m.id}.{f.id}", f"initial {f.initial!r} not among values")
        for s in m.storages:
            if s.capacity is not None and s.capacity < 1:
                fatal("STORAGE_BOUNDS", f"{m.id}.{s.id}", "capacity must be positive")
            if s.level < 0:
                fatal("STORAGE_BOUNDS", f"{m.id}.{s.id}", "level must be non-negative")
            if s.capacity is not None and s.level > s.capacity:
                fatal("STORAGE_BOUNDS", f"{m.id}.{s.id}", "level exceeds capacity")

    def check_endpoint(ref: StageRef, where: str):
        if ref not in stages:
            fatal("UNKNOWN_STAGE", where, f"no stage {ref}")

    def check_guard(g: Guard, where: str):
        for fr in guard_flags(g):
            flag = flag_refs.get(fr)
            if flag is None:
                fatal("UNDECLARED_FLAG", where, f"guard references unknown flag {fr}")
        for sr in guard_storages(g):
            if sr not in storage_refs:
                fatal("UNDECLARED_STORAGE", where, f"guard references unknown storage {sr}")
        # flag-value atoms must use declared values
        def atoms(expr: Guard):
            if isinstance(expr, FlagIs):
                yield expr
            elif isinstance(expr, Not):
                yield from atoms(expr.operand)
            elif isinstance(expr, (And, Or)):
                yield from atoms(expr.left)
                yield from atoms(expr.right)

        for atom in atoms(g):
            flag = flag_refs.get(atom.flag)
            if flag is not None and atom.value not in flag.values:
                fatal("FLAG_VALUE", where, f"{atom.value!r} not a value of {atom.flag}")

    for arc in model.flows:
        where = str(arc)
        check_endpoint(arc.src, where)
        check_endpoint(arc.dst, where)
        if arc.src not in stages or arc.dst not in stages:
            continue
        if arc.src.machine == arc.dst.machine:
            if (arc.src.kind, arc.dst.kind) not in INTRA_WHITELIST:
                fatal(
                    "ILLEGAL_INTRA_ARC",
                    where,
                    f"{arc.src.kind}->{arc.dst.kind} is not a legal step inside one machine",
                )
        else:
            if not (arc.src.kind == "transfer" and arc.dst.kind == "transfer"):
                fatal(
                    "ILLEGAL_INTER_ARC",
                    where,
                    "arcs between machines must connect transfer to transfer",
                )

    for arc in model.triggers:
        where = str(arc)
        check_endpoint(arc.src, where)
        if isinstance(arc.dst, StageRef):
            check_endpoint(arc.dst, where)
            if arc.src == arc.dst:
                fatal("TRIGGER_SELF_LOOP", where, "a trigger cannot target its own source stage")
        else:
            flag = flag_refs.get(arc.dst.flag)
            if flag is None:
                fatal("UNDECLARED_FLAG", where, f"assignment to unknown flag {arc.dst.flag}")
            elif arc.dst.value not in flag.values:
                fatal("FLAG_VALUE", where, f"{arc.dst.value!r} not a value of {arc.dst.flag}")
        if arc.guard is not None:
            check_guard(arc.guard, where)

    arc_targets: dict[StageRef, set[StageRef]] = {}
    for arc in model.flows:
        arc_targets.setdefault(arc.src, set()).add(arc.dst)
    for arc in model.triggers:
        if isinstance(arc.dst, StageRef):
            arc_targets.setdefault(arc.src, set()).add(arc.dst)

    choice_stages: dict[StageRef, str] = {}
    for choice in model.choices:
        where = f"choice {choice.name} at {choice.stage}"
        check_endpoint(choice.stage, where)
        prev = choice_stages.get(choice.stage)
        if prev is not None and prev != choice.name:
            fatal("DUPLICATE_CHOICE", where, f"stage already carries choice {prev!r}")
        choice_stages[choice.stage] = choice.name
        for _, target in choice.outcomes:
            if target not in arc_targets.get(choice.stage, set()):
                fatal("CHOICE_TARGET", where, f"no arc from {choice.stage} to {target}")

    return ValidationReport(sorted(findings))


# ---------------------------------------------------------------------------
# Lookup and reachability
# ---------------------------------------------------------------------------


def find_stage(model: StaticModel, path: str) -> StageRef | None:
    """Resolve a dotted path like ``"Money.receive"`` to a stage.

    The final segment is the stage kind; the preceding segments must be a
    suffix of the owning machine's hierarchy path.  A bare kind matches any
    machine owning that stage and raises :class:`AmbiguousPathError` when
    several do.  Returns None when nothing matches.
    """
    segs = [s for s in path.split(".") if s] if path else []
    if not segs or segs[-1] not in KINDS:
        return None
    kind = segs[-1]
    prefix = tuple(segs[:-1])
    paths = model.machine_paths()
    matches = []
    for m in model.all_machines().values():
        if kind not in m.stages:
            continue
        mpath = paths[m.id]
        if prefix and mpath[-len(prefix):] != prefix:
            continue
        matches.append(StageRef(m.id, kind))
    if not matches:
        return None
    if len(matches) > 1:
        raise AmbiguousPathError(f"{path!r} matches {len(matches)} stages")
    return matches[0]


def flow_closure(model: StaticModel, start: StageRef) -> set[StageRef]:
    """Reflexive-transitive closure over flow arcs only (triggers excluded)."""
    out: dict[StageRef, list[StageRef]] = {}
    for arc in model.flows:
        out.setdefault(arc.src, []).append(arc.dst)
    seen = {start}
    frontier = [start]
    while frontier:
        nxt = frontier.pop()
        for dst in out.get(nxt, ()):
            if dst not in seen:
                seen.add(dst)
                frontier.append(dst)
    return seen
