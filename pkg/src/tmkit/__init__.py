"""tmkit: thinging-machine modeling toolkit.

Define static flow models in a small DSL, decompose them into event
regions, attach time to form behavioral models, simulate deterministically,
and check traces and safety properties.
"""

from .core import (
    And,
    ArcRef,
    Choice,
    Finding,
    Flag,
    FlagAssign,
    FlagIs,
    FlagRef,
    FlowArc,
    KINDS,
    LevelTest,
    Machine,
    Not,
    Or,
    StageRef,
    StaticModel,
    Storage,
    TriggerArc,
    ValidationReport,
    find_stage,
    flow_closure,
    validate_static,
)
from .dsl import Document, ParseDiagnostic, ParseResult, SourceUnit, parse, serialize
from .dynamics import (
    BehavioralModel,
    CoverageReport,
    Edge,
    Event,
    EventRegion,
    build_behavior,
    coverage,
    mk_event,
    region,
    static_of,
)
from .sim import (
    Occurrence,
    ScriptEntry,
    SimConfig,
    Stimulus,
    Thing,
    Trace,
    Verdict,
    check_trace,
    script_choice,
    simulate,
    trace_from_json,
    trace_to_json,
)

__version__ = "0.1.0"
