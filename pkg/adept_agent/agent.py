"""Three-phase inference engine.

Phase 1 proposes a candidate pool without tools, phase 2 accumulates
evidence through the tool registry under a hard call cap, and phase 3
adjudicates from the recorded ledger alone. The engine enforces legality:
illegal policy actions become violations and no-ops, never exceptions.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Mapping, Optional, Tuple

from .acoustic import SignalView
from .errors import AdeptError, MalformedPolicyMessage, PolicyTimeout, TransportError
from .features import FrameParams, load_audio
from .labels import Emotion, UtteranceRecord, canonicalize_emotion, emotion_names
from .policy import PolicyAction, PolicyInterface, PolicyRequest
from .prior import PriorTable
from .semantic import SemanticSchema
from .tools import PRIOR_TOOL, Observation, ToolCall, ToolContext, execute_tool, tool_schemas
from .validation import (
    DIAGNOSTIC,
    FORMAT,
    PHASE,
    Decision,
    Phase1Output,
    Violation,
    validate_phase_output,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_CALLS = 12
COMPLETED = "completed"
BACKEND_UNAVAILABLE = "backend_unavailable"
POLICY_TIMEOUT = "policy_timeout"
AUDIO_UNAVAILABLE = "audio_unavailable"
AUDIO_MODES = ("reference", "summary")


def load_prompts() -> Dict[int, str]:
    """Load the shipped phase system prompts."""
    base = resources.files("adept_agent") / "prompts"
    return {p: (base / f"phase{p}.txt").read_text(encoding="utf-8") for p in (1, 2, 3)}


def rollout_seed(seed: int, utterance_id: str, rollout: int) -> int:
    blob = f"{seed}:{utterance_id}:{rollout}".encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


@dataclass
class AgentConfig:
    prior: PriorTable
    refs: Any = None
    schema: Optional[SemanticSchema] = None
    max_calls: int = DEFAULT_MAX_CALLS
    seed: int = 0
    rollout: int = 0
    prompts: Optional[Dict[int, str]] = None
    audio_mode: str = "reference"
    max_reasks: int = 2
    params: Optional[FrameParams] = None

    def __post_init__(self):
        if self.max_calls < 0:
            raise ValueError("max_calls must be >= 0")
        if self.audio_mode not in AUDIO_MODES:
            raise ValueError(f"Unsupported audio mode: {self.audio_mode}. Supported: {', '.join(AUDIO_MODES)}")


@dataclass
class PhaseRecord:
    phase: int
    raw: Optional[str] = None
    parsed: Optional[Dict] = None

    def to_dict(self) -> Dict:
        return {"phase": self.phase, "raw": self.raw, "parsed": self.parsed}


@dataclass
class Trajectory:
    """Auditable record of one rollout."""

    utterance_id: str
    rollout: int = 0
    seed: int = 0
    status: str = COMPLETED
    phases: List[PhaseRecord] = field(default_factory=list)
    calls: List[ToolCall] = field(default_factory=list)
    observations: List[Observation] = field(default_factory=list)
    candidate_history: List[List[str]] = field(default_factory=list)
    violations: List[Violation] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def aborted(self) -> bool:
        return self.status != COMPLETED

    def phase(self, index: int) -> Optional[PhaseRecord]:
        for record in self.phases:
            if record.phase == index:
                return record
        return None

    @property
    def phase1(self) -> Optional[Phase1Output]:
        record = self.phase(1)
        return Phase1Output.from_dict(record.parsed) if record and record.parsed else None

    def decision(self, index: int) -> Optional[Decision]:
        record = self.phase(index)
        return Decision.from_dict(record.parsed) if record and record.parsed else None

    @property
    def pool(self) -> List[Emotion]:
        p1 = self.phase1
        return [c.emotion for c in p1.candidate_pool] if p1 else []

    @property
    def prediction(self) -> Tuple[frozenset, frozenset]:
        """(P, M) from the phase-3 output; empty sets when it is missing or malformed."""
        final = self.decision(3)
        if final is None:
            return frozenset(), frozenset()
        return final.primary, final.minor

    @property
    def phase2_calls(self) -> List[Observation]:
        return [o for o in self.observations if o.phase == 2]

    def violation_codes(self) -> List[str]:
        return [v.code for v in self.violations]

    def to_dict(self) -> Dict:
        primary, minor = self.prediction
        return {
            "utterance_id": self.utterance_id,
            "rollout": self.rollout,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "phases": [p.to_dict() for p in self.phases],
            "calls": [c.to_dict() for c in self.calls],
            "observations": [o.to_dict() for o in self.observations],
            "candidate_history": [list(c) for c in self.candidate_history],
            "violations": [v.to_dict() for v in self.violations],
            "prediction": {"primary": emotion_names(primary), "minor": emotion_names(minor)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Mapping) -> "Trajectory":
        return cls(
            utterance_id=data["utterance_id"],
            rollout=int(data.get("rollout", 0)),
            seed=int(data.get("seed", 0)),
            status=data.get("status", COMPLETED),
            error=data.get("error"),
            phases=[PhaseRecord(p["phase"], p.get("raw"), p.get("parsed")) for p in data.get("phases", [])],
            calls=[
                ToolCall(c["name"], c.get("arguments"), c.get("phase", 2), c.get("seq", 0), c.get("call_id"))
                for c in data.get("calls", [])
            ],
            observations=[Observation.from_dict(o) for o in data.get("observations", [])],
            candidate_history=[list(c) for c in data.get("candidate_history", [])],
            violations=[Violation.from_dict(v) for v in data.get("violations", [])],
        )


class _Abort(Exception):
    def __init__(self, status: str, message: str):
        super().__init__(message)
        self.status = status


def _observation_message(obs: Observation) -> str:
    body: Dict[str, Any] = {"obs_id": obs.obs_id, "tool": obs.tool, "ok": obs.ok}
    if obs.ok:
        body["result"] = obs.result
    else:
        body["error"] = obs.error
    return json.dumps(body, sort_keys=True)


class _Run:
    """Mutable state of one trajectory while it executes."""

    def __init__(self, utterance: UtteranceRecord, policy: PolicyInterface, config: AgentConfig,
                 view: SignalView, seed: int):
        self.utterance = utterance
        self.policy = policy
        self.config = config
        self.view = view
        self.prompts = config.prompts or load_prompts()
        self.traj = Trajectory(utterance.id, config.rollout, seed)
        self.ctx = ToolContext(utterance, view, config.prior, config.refs, config.schema)
        self.seq = 0

    def violate(self, code: str, phase: int, category: str, detail: str = "") -> None:
        self.traj.violations.append(Violation(code, phase, category, detail))

    def context_block(self) -> str:
        lines = [f"Utterance: {self.utterance.id}", f"Transcript: {self.utterance.transcript}"]
        if self.config.audio_mode == "summary":
            summary = {k: v for k, v in self.view.whole_utterance_metrics().items() if v is not None}
            lines.append("Audio summary: " + json.dumps(summary, sort_keys=True))
        else:
            lines.append(
                f"Audio: {self.utterance.audio} ({self.view.duration:.2f}s, {self.view.signal.sr} Hz)"
            )
        return "\n".join(lines)

    def ask(self, phase: int, messages: List[Dict], tools: List[Dict], observations: List[Dict],
            reask: int) -> Optional[PolicyAction]:
        request = PolicyRequest(
            phase=phase,
            messages=messages,
            tools=tools,
            observations=observations,
            utterance_id=self.utterance.id,
            transcript=self.utterance.transcript,
            candidates=emotion_names(self.ctx.candidates),
            reask=reask,
        )
        try:
            return self.policy.act(request)
        except MalformedPolicyMessage as e:
            self.violate("malformed_policy_message", phase, FORMAT, str(e))
            return None
        except PolicyTimeout as e:
            raise _Abort(POLICY_TIMEOUT, str(e))
        except TransportError as e:
            raise _Abort(BACKEND_UNAVAILABLE, str(e))

    def record_call(self, action: PolicyAction, phase: int) -> ToolCall:
        self.seq += 1
        call = ToolCall(action.tool_name or "", action.arguments, phase, self.seq,
                        action.call_id or f"call_{self.seq}")
        self.traj.calls.append(call)
        return call

    def finish_phase(self, phase: int, raw: Optional[str], known_ids: Optional[List[str]] = None):
        if raw is None:
            self.traj.phases.append(PhaseRecord(phase))
            return None
        result = validate_phase_output(phase, raw, known_evidence_ids=known_ids)
        self.traj.violations.extend(result.violations)
        parsed = result.parsed.to_dict() if result.parsed is not None else None
        self.traj.phases.append(PhaseRecord(phase, raw, parsed))
        return result.parsed

    def tool_free_phase(self, phase: int, messages: List[Dict], observations: List[Dict],
                        known_ids: Optional[List[str]] = None):
        """Phases 1 and 3: tool calls are suppressed and the policy is re-asked."""
        for reask in range(self.config.max_reasks + 1):
            action = self.ask(phase, messages, [], observations, reask)
            if action is None:
                break
            if not action.is_tool_call:
                return self.finish_phase(phase, action.text, known_ids)
            call = self.record_call(action, phase)
            self.violate(f"phase{phase}_tool_call", phase, PHASE, call.name)
            messages = messages + [{
                "role": "user",
                "content": f"Tool calls are not allowed in phase {phase}. Reply with the phase output JSON only.",
            }]
        self.violate("missing_phase_output", phase, FORMAT, f"no phase-{phase} output")
        return self.finish_phase(phase, None)

    def update_candidates(self, obs: Observation) -> None:
        if not (obs.ok and obs.tool == PRIOR_TOOL):
            return
        try:
            current = [canonicalize_emotion(e) for e in obs.arguments.get("candidates", [])]
        except AdeptError:
            return
        current = list(dict.fromkeys(current))
        names = emotion_names(current)
        if not self.traj.candidate_history or names != self.traj.candidate_history[-1]:
            self.traj.candidate_history.append(names)
        self.ctx.candidates = current

    def phase1(self) -> Optional[Phase1Output]:
        messages = [
            {"role": "system", "content": self.prompts[1]},
            {"role": "user", "content": self.context_block()},
        ]
        out = self.tool_free_phase(1, messages, [])
        if out is not None:
            self.ctx.candidates = [c.emotion for c in out.candidate_pool]
            self.traj.candidate_history.append(emotion_names(self.ctx.candidates))
        return out

    def phase2(self, phase1: Optional[Phase1Output]) -> Optional[Decision]:
        pool = json.dumps(phase1.to_dict(), sort_keys=True) if phase1 else "{}"
        messages: List[Dict] = [
            {"role": "system", "content": self.prompts[2]},
            {"role": "user", "content": f"{self.context_block()}\nPhase-1 output: {pool}"},
        ]
        schemas = tool_schemas()
        executed = 0
        reasks = 0
        raw: Optional[str] = None
        while True:
            tools = schemas if executed < self.config.max_calls else []
            visible = [o.to_dict() for o in self.traj.observations]
            action = self.ask(2, messages, tools, visible, reasks)
            if action is None:
                break
            if not action.is_tool_call:
                raw = action.text
                break
            call = self.record_call(action, 2)
            if executed >= self.config.max_calls:
                self.violate("phase2_budget_exhausted", 2, DIAGNOSTIC, call.name)
                reasks += 1
                if reasks > self.config.max_reasks:
                    break
                messages = messages + [{
                    "role": "user",
                    "content": "The tool budget is spent. Reply with the final_decision JSON now.",
                }]
                continue
            obs = execute_tool(call, self.ctx, f"obs-{len(self.traj.observations) + 1}")
            executed += 1
            self.traj.observations.append(obs)
            self.update_candidates(obs)
            messages = messages + [
                {
                    "role": "assistant",
                    "content": None,
                    "tool_calls": [{
                        "id": call.call_id,
                        "type": "function",
                        "function": {"name": call.name, "arguments": json.dumps(call.arguments, sort_keys=True)},
                    }],
                },
                {"role": "tool", "tool_call_id": call.call_id, "content": _observation_message(obs)},
            ]

        if not any(o.ok and o.tool == PRIOR_TOOL for o in self.traj.observations):
            self.violate("phase2_missing_mandatory_tool", 2, PHASE, PRIOR_TOOL)
        if raw is None:
            self.violate("missing_phase_output", 2, FORMAT, "no final_decision")
        return self.finish_phase(2, raw)

    def phase3(self, phase1: Optional[Phase1Output], phase2: Optional[Decision]) -> Optional[Decision]:
        # the prior is scheduling input only and stays out of adjudication
        ledger = [o for o in self.traj.observations if o.tool != PRIOR_TOOL]
        visible = [o.to_dict() for o in ledger]
        known = [o.obs_id for o in ledger]
        context = {
            "phase1": phase1.to_dict() if phase1 else None,
            "phase2": phase2.to_dict() if phase2 else None,
            "ledger": [json.loads(_observation_message(o)) for o in ledger],
        }
        messages = [
            {"role": "system", "content": self.prompts[3]},
            {
                "role": "user",
                "content": f"Utterance: {self.utterance.id}\nTranscript: {self.utterance.transcript}\n"
                + json.dumps(context, sort_keys=True),
            },
        ]
        final = self.tool_free_phase(3, messages, visible, known)
        if final is not None and phase2 is not None:
            if (final.primary, final.minor) != (phase2.primary, phase2.minor):
                self.violate("phase_decision_disagreement", 3, DIAGNOSTIC,
                             f"phase2={emotion_names(phase2.primary)} phase3={emotion_names(final.primary)}")
        return final


def run_trajectory(
    utterance: UtteranceRecord,
    policy: PolicyInterface,
    config: AgentConfig,
    view: Optional[SignalView] = None,
) -> Trajectory:
    """
    Run the three-phase protocol for one utterance.

    Args:
        utterance: Manifest record (audio, transcript, alignment)
        policy: Policy proposing each action
        config: Prior table, references, budget and seed
        view: Pre-loaded signal view shared across rollouts (loaded from disk if omitted)

    Returns:
        Trajectory; transport failures and timeouts abort it with a status instead of raising
    """
    seed = rollout_seed(config.seed, utterance.id, config.rollout)
    if view is None:
        try:
            view = SignalView(load_audio(utterance.audio), config.params)
        except (AdeptError, OSError, RuntimeError) as e:
            logger.warning("Trajectory %s/%d aborted: audio unavailable: %s", utterance.id, config.rollout, e)
            return Trajectory(utterance.id, config.rollout, seed, status=AUDIO_UNAVAILABLE, error=str(e))

    run = _Run(utterance, policy, config, view, seed)
    policy.start(utterance.id, seed)
    try:
        p1 = run.phase1()
        p2 = run.phase2(p1)
        run.phase3(p1, p2)
    except _Abort as e:
        logger.warning("Trajectory %s/%d aborted (%s): %s", utterance.id, config.rollout, e.status, e)
        run.traj.status = e.status
        run.traj.error = str(e)
    return run.traj
