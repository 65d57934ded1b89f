"""Tool registry and dispatch for the evidence-accumulation phase.

Arguments are validated against pydantic models before dispatch. Tool errors
come back as error observations so the policy can see them; they never abort
a trajectory.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .acoustic import (
    AcousticObservation,
    SignalView,
    analyze_segment,
    anchor_span,
    compare_segments,
    find_hotspots,
)
from .errors import AdeptError
from .labels import Emotion, UtteranceRecord, canonicalize_emotion
from .prior import PriorQuery, PriorTable, query
from .semantic import (
    SemanticSchema,
    check_semantic_alignment,
    compare_emotions,
    default_schema,
    verify_semantic_evidence,
)

logger = logging.getLogger(__name__)

PRIOR_TOOL = "StructuralPriorTool"
SEMANTIC_GATE = "run_semantic_gate"
COMPARE_EMOTIONS = "compare_emotions"
FIND_HOTSPOTS = "find_acoustic_hotspots"
ANALYZE_SEGMENT = "analyze_acoustic_segment"
COMPARE_SEGMENTS = "compare_acoustic_segments"
REPLAY_AUDIO = "replay_audio"
CHECK_ALIGNMENT = "check_semantic_alignment"

ACOUSTIC_TOOLS = (FIND_HOTSPOTS, ANALYZE_SEGMENT, COMPARE_SEGMENTS, REPLAY_AUDIO)
SEMANTIC_TOOLS = (SEMANTIC_GATE, COMPARE_EMOTIONS, CHECK_ALIGNMENT)


class _Args(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StructuralPriorArgs(_Args):
    candidates: List[str] = Field(min_length=1, description="Current candidate emotions C_t")
    intent: Literal["verify", "expand"] = "verify"
    anchor: Optional[str] = Field(default=None, description="Anchor emotion inside the candidates")
    tie_mode: bool = False
    k: int = Field(default=3, ge=0, le=28)
    l: int = Field(default=2, ge=0, le=8)  # noqa: E741


class SemanticGateArgs(_Args):
    emotion: str = Field(description="Emotion whose appraisal profile is checked against the transcript")


class CompareEmotionsArgs(_Args):
    emotion_a: str
    emotion_b: str


class HotspotArgs(_Args):
    focus_type: Literal["energy_burst", "pitch_excursion", "pause_contrast", "voicing_instability"]
    top_n: int = Field(default=3, ge=1, le=10)


class AnalyzeSegmentArgs(_Args):
    start: Optional[float] = Field(default=None, ge=0)
    end: Optional[float] = Field(default=None, gt=0)
    words: Optional[List[int]] = Field(default=None, description="Word indices to anchor the span on")
    metrics: Optional[List[str]] = None

    @model_validator(mode="after")
    def _span_given(self):
        if self.words is None and (self.start is None or self.end is None):
            raise ValueError("give either start and end, or words")
        return self


class CompareSegmentsArgs(_Args):
    segments: List[Tuple[float, float]] = Field(min_length=2)
    metrics: Optional[List[str]] = None


class ReplayArgs(_Args):
    reason: str
    focus_points: List[Tuple[float, float]] = Field(min_length=1)

    @field_validator("focus_points", mode="before")
    @classmethod
    def _single_span(cls, value):
        if isinstance(value, (list, tuple)) and len(value) == 2 and all(
            isinstance(v, (int, float)) for v in value
        ):
            return [list(value)]
        return value


class AlignmentArgs(_Args):
    observation_ids: Optional[List[str]] = None
    hypotheses: Optional[List[str]] = None


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Any
    phase: int = 2
    seq: int = 0
    call_id: Optional[str] = None

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "arguments": self.arguments,
            "phase": self.phase,
            "seq": self.seq,
            "call_id": self.call_id,
        }


def _digest(payload: Dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Observation:
    """One auditable tool output. Immutable once recorded."""

    obs_id: str
    tool: str
    called_as: str
    arguments: Any
    phase: int
    seq: int
    ok: bool
    result: Optional[Dict] = None
    error: Optional[Dict] = None
    digest: str = ""

    @classmethod
    def create(cls, obs_id: str, tool: str, called_as: str, arguments: Any, phase: int, seq: int,
               result: Optional[Dict] = None, error: Optional[Dict] = None) -> "Observation":
        body = {
            "obs_id": obs_id,
            "tool": tool,
            "called_as": called_as,
            "arguments": arguments,
            "phase": phase,
            "seq": seq,
            "ok": error is None,
            "result": result,
            "error": error,
        }
        return cls(digest=_digest(body), **body)

    def to_dict(self) -> Dict:
        return {
            "obs_id": self.obs_id,
            "tool": self.tool,
            "called_as": self.called_as,
            "arguments": self.arguments,
            "phase": self.phase,
            "seq": self.seq,
            "ok": self.ok,
            "result": self.result,
            "error": self.error,
            "digest": self.digest,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Observation":
        return cls(
            obs_id=data["obs_id"],
            tool=data["tool"],
            called_as=data.get("called_as", data["tool"]),
            arguments=data.get("arguments"),
            phase=int(data.get("phase", 2)),
            seq=int(data.get("seq", 0)),
            ok=bool(data.get("ok", False)),
            result=data.get("result"),
            error=data.get("error"),
            digest=data.get("digest", ""),
        )


@dataclass
class ToolContext:
    """Everything a tool may read. Only ``results`` and ``candidates`` change during a rollout."""

    utterance: UtteranceRecord
    view: SignalView
    prior: PriorTable
    refs: Any = None
    schema: Optional[SemanticSchema] = None
    results: Dict[str, Any] = field(default_factory=dict)
    candidates: List[Emotion] = field(default_factory=list)

    @property
    def semantic_schema(self) -> SemanticSchema:
        return self.schema or default_schema()

    def latest_acoustic(self) -> List[AcousticObservation]:
        for obs_id in reversed(list(self.results)):
            found = _acoustic_items(self.results[obs_id])
            if found:
                return found
        return []


def _acoustic_items(result: Any) -> List[AcousticObservation]:
    if isinstance(result, AcousticObservation):
        return [result]
    if isinstance(result, list) and result and all(isinstance(r, AcousticObservation) for r in result):
        return list(result)
    observations = getattr(result, "observations", None)
    if isinstance(observations, list) and observations and isinstance(observations[0], AcousticObservation):
        return list(observations)
    return []


def _run_prior(args: StructuralPriorArgs, ctx: ToolContext):
    q = PriorQuery.from_arguments(
        args.candidates, args.intent, args.anchor, args.tie_mode, args.k, args.l
    )
    answer = query(ctx.prior, q)
    return answer.to_dict(), answer


def _run_semantic_gate(args: SemanticGateArgs, ctx: ToolContext):
    evidence = verify_semantic_evidence(args.emotion, ctx.utterance.transcript, ctx.semantic_schema)
    emotion = canonicalize_emotion(args.emotion)
    return {"emotion": emotion.name, "evidence": [ev.to_dict() for ev in evidence]}, evidence


def _run_compare_emotions(args: CompareEmotionsArgs, ctx: ToolContext):
    report = compare_emotions(args.emotion_a, args.emotion_b, ctx.utterance.transcript, ctx.semantic_schema)
    return report.to_dict(), report


def _run_hotspots(args: HotspotArgs, ctx: ToolContext):
    result = find_hotspots(ctx.view, args.focus_type, args.top_n)
    return result.to_dict(), result


def _run_analyze(args: AnalyzeSegmentArgs, ctx: ToolContext):
    if args.words is not None:
        t_s, t_e = anchor_span(ctx.utterance.alignment, args.words, duration=ctx.view.duration)
    else:
        t_s, t_e = args.start, args.end
    obs = analyze_segment(ctx.view, t_s, t_e, args.metrics, ctx.refs, ctx.utterance.speaker)
    return obs.to_dict(), obs


def _run_compare_segments(args: CompareSegmentsArgs, ctx: ToolContext):
    report = compare_segments(ctx.view, args.segments, args.metrics, ctx.refs, ctx.utterance.speaker)
    return report.to_dict(), report


def _run_replay(args: ReplayArgs, ctx: ToolContext):
    observations: List[AcousticObservation] = []
    bundle = []
    for t_s, t_e in args.focus_points:
        try:
            obs = analyze_segment(ctx.view, t_s, t_e, None, ctx.refs, ctx.utterance.speaker)
        except AdeptError as e:
            bundle.append({"segment": [t_s, t_e], "error": {"code": e.code, "message": str(e)}})
            continue
        observations.append(obs)
        bundle.append(obs.to_dict())
    if not observations:
        raise ValueError("no focus point could be re-analyzed")
    return {"re_audit": True, "reason": args.reason, "observations": bundle}, observations


def _run_alignment(args: AlignmentArgs, ctx: ToolContext):
    if args.observation_ids:
        acoustic: List[AcousticObservation] = []
        for obs_id in args.observation_ids:
            if obs_id not in ctx.results:
                raise AdeptError(f"unknown observation id {obs_id}", code="unknown_evidence_id")
            acoustic.extend(_acoustic_items(ctx.results[obs_id]))
    else:
        acoustic = ctx.latest_acoustic()
    hypotheses = args.hypotheses if args.hypotheses is not None else ctx.candidates
    verdict = check_semantic_alignment(
        acoustic, ctx.utterance.transcript, hypotheses, ctx.semantic_schema
    )
    out = verdict.to_dict()
    out["n_acoustic_observations"] = len(acoustic)
    return out, verdict


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    args_model: Type[BaseModel]
    handler: Callable
    aliases: Tuple[str, ...] = ()

    def schema(self) -> Dict:
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.args_model.model_json_schema(),
            },
        }


TOOL_REGISTRY: Dict[str, ToolSpec] = {
    spec.name: spec
    for spec in (
        ToolSpec(
            PRIOR_TOOL,
            "Rank emotion pairs to verify and suggest expansions from corpus co-occurrence. "
            "Scheduling only: never a label decision.",
            StructuralPriorArgs,
            _run_prior,
            aliases=("get_phase2_cooccurrence_prior",),
        ),
        ToolSpec(
            SEMANTIC_GATE,
            "Search the transcript for literal appraisal cues supporting one emotion.",
            SemanticGateArgs,
            _run_semantic_gate,
            aliases=("verify_semantic_evidence",),
        ),
        ToolSpec(
            COMPARE_EMOTIONS,
            "Check the appraisal factors on which two emotions diverge.",
            CompareEmotionsArgs,
            _run_compare_emotions,
        ),
        ToolSpec(
            FIND_HOTSPOTS,
            "Locate acoustic regions of interest (energy bursts, pitch excursions, pauses, voicing flips).",
            HotspotArgs,
            _run_hotspots,
        ),
        ToolSpec(
            ANALYZE_SEGMENT,
            "Measure prosodic metrics on a time span or word span, bucketed against global and local references.",
            AnalyzeSegmentArgs,
            _run_analyze,
        ),
        ToolSpec(
            COMPARE_SEGMENTS,
            "Compare metrics across two or more time spans.",
            CompareSegmentsArgs,
            _run_compare_segments,
        ),
        ToolSpec(
            REPLAY_AUDIO,
            "Re-audit focus spans with the full metric set when evidence conflicts.",
            ReplayArgs,
            _run_replay,
        ),
        ToolSpec(
            CHECK_ALIGNMENT,
            "Check lexical valence against the latest prosody bins (sarcasm-style conflicts).",
            AlignmentArgs,
            _run_alignment,
        ),
    )
}

_ALIASES: Dict[str, str] = {
    alias: spec.name for spec in TOOL_REGISTRY.values() for alias in (spec.name,) + spec.aliases
}


def resolve_tool_name(name: str) -> Optional[str]:
    return _ALIASES.get(name)


def tool_schemas() -> List[Dict]:
    return [spec.schema() for spec in TOOL_REGISTRY.values()]


def _error(code: str, message: str) -> Dict:
    return {"code": code, "message": message}


def execute_tool(call: ToolCall, ctx: ToolContext, obs_id: str) -> Observation:
    """
    Validate and dispatch one tool call.

    Args:
        call: Requested call (name may be an alias)
        ctx: Per-rollout tool context
        obs_id: Ledger id for the resulting observation

    Returns:
        Observation holding either the tool result or an error record
    """
    canonical = resolve_tool_name(call.name)

    def record(result=None, error=None, tool=None):
        return Observation.create(
            obs_id, tool or canonical or call.name, call.name, call.arguments,
            call.phase, call.seq, result=result, error=error,
        )

    if canonical is None:
        return record(error=_error("unknown_tool", f"Unknown tool: {call.name}"))
    spec = TOOL_REGISTRY[canonical]
    if not isinstance(call.arguments, dict):
        return record(error=_error("invalid_arguments", "arguments must be a JSON object"))
    try:
        args = spec.args_model.model_validate(call.arguments)
    except ValidationError as e:
        return record(error=_error("invalid_arguments", str(e.errors(include_url=False))))

    try:
        result, typed = spec.handler(args, ctx)
    except AdeptError as e:
        return record(error=_error(e.code, str(e)))
    except ValueError as e:
        return record(error=_error("invalid_arguments", str(e)))
    except Exception as e:  # noqa: BLE001
        logger.debug("Tool %s failed", canonical, exc_info=True)
        return record(error=_error("tool_failure", f"{type(e).__name__}: {e}"))

    ctx.results[obs_id] = typed
    return record(result=result)


def touched_emotions(observations: Sequence[Observation]) -> List[Emotion]:
    """Emotions explicitly named in successful semantic and prior-anchor calls, in first-touch order."""
    seen: List[Emotion] = []

    def add(raw):
        try:
            e = canonicalize_emotion(raw)
        except (AdeptError, TypeError):
            return
        if e not in seen:
            seen.append(e)

    for obs in observations:
        if not obs.ok or not isinstance(obs.arguments, dict):
            continue
        args = obs.arguments
        if obs.tool == SEMANTIC_GATE:
            add(args.get("emotion"))
        elif obs.tool == COMPARE_EMOTIONS:
            add(args.get("emotion_a"))
            add(args.get("emotion_b"))
        elif obs.tool == CHECK_ALIGNMENT:
            for h in args.get("hypotheses") or []:
                add(h)
        elif obs.tool == PRIOR_TOOL and args.get("anchor"):
            add(args.get("anchor"))
    return seen


def compared_pairs(observations: Sequence[Observation]) -> List[frozenset]:
    pairs = []
    for obs in observations:
        if obs.ok and obs.tool == COMPARE_EMOTIONS and obs.result:
            pairs.append(frozenset(canonicalize_emotion(e) for e in obs.result["emotions"]))
    return pairs

