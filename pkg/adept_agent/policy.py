"""Policies that drive the three-phase protocol.

The engine owns legality; a policy only proposes the next action. Three
implementations ship: a scripted replayer for tests, a seeded rule-based
heuristic for desk-scale runs, and a remote chat-completion policy.
"""

import copy
import json
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import MalformedPolicyMessage, PolicyTimeout, ScriptExhausted, TransportError
from .labels import ALL_EMOTIONS, Emotion
from .llm_client import LLMClient, get_llm_client
from .semantic import SemanticSchema, verify_semantic_evidence
from .tools import (
    ANALYZE_SEGMENT,
    CHECK_ALIGNMENT,
    COMPARE_EMOTIONS,
    FIND_HOTSPOTS,
    PRIOR_TOOL,
    REPLAY_AUDIO,
    SEMANTIC_GATE,
    resolve_tool_name,
)

logger = logging.getLogger(__name__)

OVERLAP_PAIRS = (
    frozenset({Emotion.Happiness, Emotion.Surprise}),
    frozenset({Emotion.Contempt, Emotion.Disgust}),
)


@dataclass
class PolicyRequest:
    phase: int
    messages: List[Dict[str, Any]]
    tools: List[Dict] = field(default_factory=list)
    observations: List[Dict] = field(default_factory=list)
    utterance_id: str = ""
    transcript: str = ""
    candidates: List[str] = field(default_factory=list)
    reask: int = 0


@dataclass(frozen=True)
class PolicyAction:
    kind: str
    text: Optional[str] = None
    tool_name: Optional[str] = None
    arguments: Any = None
    call_id: Optional[str] = None

    @classmethod
    def message(cls, text: str) -> "PolicyAction":
        return cls(kind="message", text=text)

    @classmethod
    def tool_call(cls, name: str, arguments: Any, call_id: Optional[str] = None) -> "PolicyAction":
        return cls(kind="tool_call", tool_name=name, arguments=arguments, call_id=call_id)

    @property
    def is_tool_call(self) -> bool:
        return self.kind == "tool_call"


class PolicyInterface(ABC):
    """Step contract: given a phase request, return a tool call or a phase message."""

    def start(self, utterance_id: str, seed: int) -> None:
        """Reset per-rollout state."""

    @abstractmethod
    def act(self, request: PolicyRequest) -> PolicyAction:
        ...


def _lookup(obj: Any, path: str) -> Any:
    for part in path.split(".") if path else []:
        if isinstance(obj, Mapping):
            obj = obj.get(part)
        elif isinstance(obj, list) and part.lstrip("-").isdigit():
            idx = int(part)
            obj = obj[idx] if -len(obj) <= idx < len(obj) else None
        else:
            return None
    return obj


def _condition_holds(when: Mapping, observations: Sequence[Mapping]) -> bool:
    tool = resolve_tool_name(when.get("tool", "")) or when.get("tool")
    matching = [o for o in observations if o.get("tool") == tool]
    if not matching:
        return False
    value = _lookup(matching[-1], when.get("path", ""))
    if "equals" in when:
        return value == when["equals"]
    if "in" in when:
        return value in when["in"]
    return value is not None


class ScriptedPolicy(PolicyInterface):
    """
    Replays a fixed action script.

    A script is a flat list consumed across phases, or a mapping with
    "phase1"/"phase2"/"phase3" lists. Per-utterance scripts go under
    "utterances" with a "default" fallback. Actions:

        {"output": {...}}                      phase message (JSON-encoded)
        {"raw": "..."}                         phase message, verbatim text
        {"tool": name, "arguments": {...}}     tool call
        {"branch": {"when": {"tool", "path", "equals"}, "then": [...], "else": [...]}}
    """

    def __init__(self, script: Union[List, Mapping]):
        self.script = script
        self._queues: Dict[Any, List] = {}
        self.start("", 0)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedPolicy":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def _select(self, utterance_id: str):
        script = self.script
        if isinstance(script, Mapping) and "utterances" in script:
            script = script["utterances"].get(utterance_id, script.get("default", []))
        return script

    def start(self, utterance_id: str, seed: int) -> None:
        script = copy.deepcopy(self._select(utterance_id))
        if isinstance(script, Mapping):
            self._queues = {p: list(script.get(f"phase{p}", [])) for p in (1, 2, 3)}
        else:
            self._queues = {None: list(script)}

    def act(self, request: PolicyRequest) -> PolicyAction:
        queue = self._queues.get(request.phase, self._queues.get(None))
        while queue:
            action = queue.pop(0)
            if "branch" in action:
                branch = action["branch"]
                chosen = branch.get("then", []) if _condition_holds(
                    branch.get("when", {}), request.observations
                ) else branch.get("else", [])
                queue[:0] = copy.deepcopy(chosen)
                continue
            if "tool" in action:
                return PolicyAction.tool_call(action["tool"], action.get("arguments", {}), action.get("id"))
            if "output" in action:
                return PolicyAction.message(json.dumps(action["output"], sort_keys=True))
            if "raw" in action:
                return PolicyAction.message(str(action["raw"]))
            raise MalformedPolicyMessage(f"unrecognized script action: {sorted(action)}")
        raise ScriptExhausted(f"script exhausted in phase {request.phase}")


class HeuristicPolicy(PolicyInterface):
    """
    Seeded rule-based stand-in for a trained policy.

    Ranks candidates by literal appraisal cues, follows the protocol
    (prior first, core-first checks, overlap-pair comparison, hotspot
    measurement, alignment check, replay on conflict) and skips optional
    checks at random so rollouts in a group differ.
    """

    def __init__(self, schema: Optional[SemanticSchema] = None, explore: float = 0.3):
        self.schema = schema
        self.explore = explore
        self.start("", 0)

    def start(self, utterance_id: str, seed: int) -> None:
        self.rng = np.random.default_rng(seed)
        self.pool: List[Emotion] = []
        self.tie: Optional[List[Emotion]] = None
        self.plan: Optional[List] = None
        self.decision: Optional[Dict] = None

    def _cue_count(self, emotion: Emotion, transcript: str) -> int:
        evidence = verify_semantic_evidence(emotion, transcript, self.schema)
        return sum(1 for ev in evidence if not ev.is_insufficient)

    def _phase1(self, request: PolicyRequest) -> PolicyAction:
        counts = {e: self._cue_count(e, request.transcript) for e in ALL_EMOTIONS}
        counts[Emotion.Neutral] = max(counts[Emotion.Neutral], 1)
        noise = self.rng.uniform(0.0, self.explore * 2, size=len(ALL_EMOTIONS))
        ranked = sorted(ALL_EMOTIONS, key=lambda e: (-(counts[e] + noise[int(e)]), int(e)))
        self.pool = ranked[:3]
        top, second = self.pool[0], self.pool[1]
        self.tie = [top, second] if counts[top] == counts[second] and counts[top] > 0 else None
        output = {
            "candidate_pool": [
                {"emotion": e.name, "confidence": conf}
                for e, conf in zip(self.pool, ("high", "mid", "low"))
            ],
            "tie_prediction": [e.name for e in self.tie] if self.tie else None,
            "reasoning": "Lexical cues suggest checking "
            + ", ".join(e.name for e in self.pool)
            + " against the prosody.",
        }
        return PolicyAction.message(json.dumps(output, sort_keys=True))

    def _initial_plan(self) -> List:
        names = [e.name for e in self.pool]
        plan = [(PRIOR_TOOL, {"candidates": names, "intent": "verify", "anchor": names[0]})]
        plan.append((SEMANTIC_GATE, {"emotion": names[0]}))
        if len(names) > 1 and self.rng.random() >= self.explore:
            plan.append((SEMANTIC_GATE, {"emotion": names[1]}))
        for pair in OVERLAP_PAIRS:
            if pair <= set(self.pool) and self.rng.random() >= self.explore / 2:
                a, b = sorted(pair, key=int)
                plan.append((COMPARE_EMOTIONS, {"emotion_a": a.name, "emotion_b": b.name}))
        plan.append((FIND_HOTSPOTS, {"focus_type": "energy_burst", "top_n": 2}))
        return plan

    def _next_check(self, observations: Sequence[Dict]):
        done = {o["tool"] for o in observations}
        hotspots = [o for o in observations if o["tool"] == FIND_HOTSPOTS and o.get("ok")]
        rois = hotspots[-1]["result"]["rois"] if hotspots else []
        if rois and ANALYZE_SEGMENT not in done:
            t_s, t_e = rois[0]["segment"]
            return ANALYZE_SEGMENT, {"start": t_s, "end": t_e}
        if ANALYZE_SEGMENT in done and CHECK_ALIGNMENT not in done:
            return CHECK_ALIGNMENT, {}
        checks = [o for o in observations if o["tool"] == CHECK_ALIGNMENT and o.get("ok")]
        if checks and checks[-1]["result"]["verdict"] == "Conflict" and REPLAY_AUDIO not in done:
            segments = [
                o["result"]["segment"] for o in observations
                if o["tool"] == ANALYZE_SEGMENT and o.get("ok")
            ]
            if segments:
                return REPLAY_AUDIO, {"reason": "conflict", "focus_points": segments}
        return None

    def _decide(self, observations: Sequence[Dict]) -> Dict:
        supported = []
        for o in observations:
            if o["tool"] == SEMANTIC_GATE and o.get("ok"):
                if any(ev.get("result") is None for ev in o["result"]["evidence"]):
                    supported.append(o["result"]["emotion"])
        primary = [self.pool[0].name]
        if self.tie and all(e.name in supported for e in self.tie):
            primary = [e.name for e in self.tie]
        minor = [e.name for e in self.pool if e.name in supported and e.name not in primary]
        return {"primary_emotions": primary, "minor_emotions": minor}

    def act(self, request: PolicyRequest) -> PolicyAction:
        if request.phase == 1:
            return self._phase1(request)
        if request.phase == 2:
            if self.plan is None:
                self.plan = self._initial_plan()
            if request.tools:
                if self.plan:
                    tool, args = self.plan.pop(0)
                    return PolicyAction.tool_call(tool, args)
                check = self._next_check(request.observations)
                if check is not None:
                    return PolicyAction.tool_call(*check)
            self.decision = self._decide(request.observations)
            return PolicyAction.message(json.dumps(
                {"final_decision": dict(self.decision, resolved_tie=len(self.decision["primary_emotions"]) == 1)},
                sort_keys=True,
            ))
        decision = self.decision or self._decide(request.observations)
        cited = [o["obs_id"] for o in request.observations if o.get("ok")]
        output = dict(
            decision,
            evidence_ids=cited,
            reasoning=f"Decision grounded in {len(cited)} ledger entries.",
        )
        return PolicyAction.message(json.dumps({"final_output": output}, sort_keys=True))


class RemotePolicy(PolicyInterface):
    """Chat-completion policy with bounded retries on transient transport failures."""

    def __init__(
        self,
        client: LLMClient,
        phase_prompts: Optional[Mapping[int, str]] = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        max_backoff: float = 4.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.client = client
        self.phase_prompts = dict(phase_prompts or {})
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_backoff = max_backoff
        self.sleep = sleep
        self.retries = 0

    def _messages(self, request: PolicyRequest) -> List[Dict[str, Any]]:
        prompt = self.phase_prompts.get(request.phase)
        if prompt is None:
            return request.messages
        rest = [m for m in request.messages if m["role"] != "system"]
        return [{"role": "system", "content": prompt}] + rest

    def _complete(self, request: PolicyRequest):
        only_timeouts = True
        last: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.client.complete(self._messages(request), tools=request.tools or None)
            except PolicyTimeout as e:
                last = e
            except TransportError as e:
                if not e.retryable:
                    raise
                only_timeouts = False
                last = e
            if attempt < self.max_attempts:
                delay = min(self.max_backoff, self.backoff * 2 ** (attempt - 1))
                self.retries += 1
                logger.warning(
                    "Policy request failed (attempt %d/%d): %s; retrying in %.2fs",
                    attempt, self.max_attempts, last, delay,
                )
                self.sleep(delay)
        if only_timeouts:
            raise PolicyTimeout(f"policy timed out {self.max_attempts} times: {last}")
        raise TransportError(f"policy unavailable after {self.max_attempts} attempts: {last}", retryable=False)

    def act(self, request: PolicyRequest) -> PolicyAction:
        reply = self._complete(request)
        if reply.tool_calls:
            call = reply.tool_calls[0]
            return PolicyAction.tool_call(call.name, call.arguments, call.id)
        if reply.content is None:
            raise MalformedPolicyMessage("reply carried neither content nor tool calls")
        return PolicyAction.message(reply.content)


def build_policy_factory(
    spec: str,
    schema: Optional[SemanticSchema] = None,
    api_key: Optional[str] = None,
    model: Optional[str] = None,
    phase_prompts: Optional[Mapping[int, str]] = None,
) -> Callable[[], PolicyInterface]:
    """
    Turn a policy spec string into a factory producing one policy per rollout.

    Specs: "heuristic", "scripted:FILE", "remote:URL", "openai:MODEL", "anthropic:MODEL".
    """
    kind, _, target = spec.partition(":")
    if kind == "heuristic":
        return lambda: HeuristicPolicy(schema)
    if kind == "scripted":
        if not target:
            raise ValueError("scripted policy needs a script file: scripted:FILE")
        with open(target, "r", encoding="utf-8") as f:
            script = json.load(f)
        return lambda: ScriptedPolicy(script)
    if kind == "remote":
        if not target:
            raise ValueError("remote policy needs an endpoint: remote:URL")
        return lambda: RemotePolicy(
            get_llm_client("http", base_url=target, api_key=api_key, model=model or "default"),
            phase_prompts,
        )
    if kind in ("openai", "anthropic"):
        kwargs: Dict[str, Any] = {"api_key": api_key}
        if target or model:
            kwargs["model"] = target or model
        return lambda: RemotePolicy(get_llm_client(kind, **kwargs), phase_prompts)
    raise ValueError(
        f"Unsupported policy: {spec}. Supported: heuristic, scripted:FILE, remote:URL, openai:MODEL, anthropic:MODEL"
    )
