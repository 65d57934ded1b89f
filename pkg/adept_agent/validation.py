"""Phase output parsing and the format/phase-integrity checks.

Violations are data: validate_phase_output never raises on bad policy text.
"""

import json
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .errors import UnknownLabel
from .labels import Emotion, canonicalize_emotion, emotion_names

FORMAT = "format"
PHASE = "phase"
DIAGNOSTIC = "diagnostic"

FORBIDDEN_FIELDS = frozenset({"final_prediction", "primary_emotions", "conclusion"})
LEAK_PATTERNS = (
    re.compile(r"Primary\s*[:=]", re.IGNORECASE),
    re.compile(r"I conclude that", re.IGNORECASE),
)
CONFIDENCES = ("high", "mid", "low")
EVIDENCE_ID = re.compile(r"\bobs-\d+\b")

# violation codes that cost a phase its +1.0
PHASE_CONSTRAINTS: Dict[int, Tuple[str, ...]] = {
    1: ("phase1_forbidden_field", "phase1_semantic_leak", "phase1_tool_call"),
    2: ("phase2_missing_mandatory_tool",),
    3: ("phase3_tool_call",),
}


@dataclass(frozen=True)
class Violation:
    code: str
    phase: int
    category: str
    detail: str = ""

    def to_dict(self) -> Dict:
        return {"code": self.code, "phase": self.phase, "category": self.category, "detail": self.detail}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Violation":
        return cls(data["code"], int(data["phase"]), data["category"], data.get("detail", ""))


@dataclass(frozen=True)
class Candidate:
    emotion: Emotion
    confidence: Optional[str] = None
    rank: Optional[int] = None

    def to_dict(self) -> Dict:
        out: Dict[str, Any] = {"emotion": self.emotion.name, "confidence": self.confidence}
        if self.rank is not None:
            out["rank"] = self.rank
        return out


@dataclass(frozen=True)
class Phase1Output:
    candidate_pool: Tuple[Candidate, ...]
    tie_prediction: Optional[Tuple[Emotion, Emotion]] = None
    reasoning: str = ""

    def to_dict(self) -> Dict:
        return {
            "candidate_pool": [c.to_dict() for c in self.candidate_pool],
            "tie_prediction": emotion_names(self.tie_prediction) if self.tie_prediction else None,
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Phase1Output":
        pool = tuple(
            Candidate(canonicalize_emotion(c["emotion"]), c.get("confidence"), c.get("rank"))
            for c in data["candidate_pool"]
        )
        tie = data.get("tie_prediction")
        return cls(
            candidate_pool=pool,
            tie_prediction=tuple(canonicalize_emotion(e) for e in tie) if tie else None,
            reasoning=data.get("reasoning", ""),
        )


@dataclass(frozen=True)
class Decision:
    """Phase-2 final_decision or phase-3 final_output."""

    primary: frozenset
    minor: frozenset = frozenset()
    reasoning: str = ""
    evidence_ids: Tuple[str, ...] = ()
    resolved_tie: Optional[bool] = None

    def to_dict(self) -> Dict:
        return {
            "primary_emotions": emotion_names(self.primary),
            "minor_emotions": emotion_names(self.minor),
            "reasoning": self.reasoning,
            "evidence_ids": list(self.evidence_ids),
            "resolved_tie": self.resolved_tie,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Decision":
        return cls(
            primary=frozenset(canonicalize_emotion(e) for e in data["primary_emotions"]),
            minor=frozenset(canonicalize_emotion(e) for e in data.get("minor_emotions", [])),
            reasoning=data.get("reasoning", ""),
            evidence_ids=tuple(data.get("evidence_ids", [])),
            resolved_tie=data.get("resolved_tie"),
        )


@dataclass
class PhaseValidation:
    phase: int
    parsed: Any = None
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.parsed is not None and not any(v.category == FORMAT for v in self.violations)


def strip_fences(raw: str) -> str:
    text = raw.strip()
    if text.startswith("```json"):
        text = text[7:]
    elif text.startswith("```"):
        text = text[3:]
    if text.endswith("```"):
        text = text[:-3]
    return text.strip()


def _find_keys(obj: Any, keys: Iterable[str]) -> List[str]:
    keys = set(keys)
    found = []
    if isinstance(obj, Mapping):
        for k, v in obj.items():
            if k in keys:
                found.append(k)
            found.extend(_find_keys(v, keys))
    elif isinstance(obj, list):
        for item in obj:
            found.extend(_find_keys(item, keys))
    return found


def _labels(
    raw: Any, phase: int, where: str, aliases: Optional[Mapping[str, str]], out: List[Violation]
) -> Optional[List[Emotion]]:
    if not isinstance(raw, list):
        out.append(Violation("invalid_label", phase, FORMAT, f"{where} must be a list"))
        return None
    labels = []
    for item in raw:
        try:
            labels.append(canonicalize_emotion(item, aliases))
        except UnknownLabel:
            out.append(Violation("invalid_label", phase, FORMAT, f"{where}: {item!r}"))
            return None
    return labels


def _phase1(data: Dict, aliases, out: List[Violation]) -> Optional[Phase1Output]:
    for key in sorted(set(_find_keys(data, FORBIDDEN_FIELDS))):
        out.append(Violation("phase1_forbidden_field", 1, PHASE, key))
    reasoning = data.get("reasoning") or data.get("coarse_reasoning") or ""
    if not isinstance(reasoning, str):
        reasoning = json.dumps(reasoning, sort_keys=True)
    for pattern in LEAK_PATTERNS:
        if pattern.search(reasoning):
            out.append(Violation("phase1_semantic_leak", 1, PHASE, pattern.pattern))

    pool_raw = data.get("candidate_pool")
    if not isinstance(pool_raw, list) or not pool_raw:
        out.append(Violation("phase1_empty_pool", 1, FORMAT, "candidate_pool missing or empty"))
        return None
    pool: List[Candidate] = []
    for position, entry in enumerate(pool_raw):
        if isinstance(entry, Mapping):
            raw_label, confidence, rank = entry.get("emotion"), entry.get("confidence"), entry.get("rank")
        else:
            raw_label, confidence, rank = entry, None, None
        try:
            emotion = canonicalize_emotion(raw_label, aliases)
        except UnknownLabel:
            out.append(Violation("invalid_label", 1, FORMAT, f"candidate_pool[{position}]: {raw_label!r}"))
            return None
        if confidence is not None:
            confidence = str(confidence).strip().lower()
            if confidence not in CONFIDENCES:
                out.append(Violation("invalid_confidence", 1, DIAGNOSTIC, confidence))
                confidence = None
        if not isinstance(rank, int) or isinstance(rank, bool):
            rank = None
        if any(c.emotion == emotion for c in pool):
            out.append(Violation("duplicate_candidate", 1, DIAGNOSTIC, emotion.name))
            continue
        pool.append(Candidate(emotion, confidence, rank))

    tie = None
    if data.get("tie_prediction"):
        labels = _labels(data["tie_prediction"], 1, "tie_prediction", aliases, out)
        if labels is None:
            return None
        if len(set(labels)) >= 2:
            tie = tuple(sorted(set(labels), key=int)[:2])
    return Phase1Output(tuple(pool), tie, reasoning)


def _decision(
    block: Any, phase: int, missing_code: str, aliases, out: List[Violation],
    known_evidence_ids: Optional[Sequence[str]],
) -> Optional[Decision]:
    if not isinstance(block, Mapping):
        out.append(Violation(missing_code, phase, FORMAT, "block missing or not an object"))
        return None
    primary_raw = block.get("primary_emotions")
    if not isinstance(primary_raw, list) or not primary_raw:
        out.append(Violation(missing_code, phase, FORMAT, "primary_emotions missing or empty"))
        return None
    primary = _labels(primary_raw, phase, "primary_emotions", aliases, out)
    minor = _labels(block.get("minor_emotions", []) or [], phase, "minor_emotions", aliases, out)
    if primary is None or minor is None:
        return None

    reasoning = block.get("reasoning") or block.get("overall_reasoning") or ""
    if not isinstance(reasoning, str):
        reasoning = json.dumps(reasoning, sort_keys=True)
    cited = list(block.get("evidence_ids") or block.get("evidence") or [])
    cited = [str(c) for c in cited] + EVIDENCE_ID.findall(reasoning)
    evidence_ids = tuple(dict.fromkeys(cited))
    if known_evidence_ids is not None:
        for obs_id in evidence_ids:
            if obs_id not in known_evidence_ids:
                out.append(Violation("unknown_evidence_id", phase, DIAGNOSTIC, obs_id))

    resolved = block.get("resolved_tie")
    return Decision(
        primary=frozenset(primary),
        minor=frozenset(minor) - frozenset(primary),
        reasoning=reasoning,
        evidence_ids=evidence_ids,
        resolved_tie=resolved if isinstance(resolved, bool) else None,
    )


def validate_phase_output(
    phase: int,
    raw: str,
    aliases: Optional[Mapping[str, str]] = None,
    known_evidence_ids: Optional[Sequence[str]] = None,
) -> PhaseValidation:
    """
    Parse one phase message and collect its violations.

    Args:
        phase: 1, 2 or 3
        raw: Policy message text (code fences allowed)
        aliases: Label alias table
        known_evidence_ids: Ledger ids the phase-3 output may cite

    Returns:
        PhaseValidation with the parsed output (None on format failure)
    """
    result = PhaseValidation(phase)
    try:
        data = json.loads(strip_fences(raw or ""))
    except json.JSONDecodeError as e:
        result.violations.append(Violation("invalid_json", phase, FORMAT, e.msg))
        return result
    if not isinstance(data, dict):
        result.violations.append(Violation("not_an_object", phase, FORMAT, type(data).__name__))
        return result

    if phase == 1:
        result.parsed = _phase1(data, aliases, result.violations)
    elif phase == 2:
        result.parsed = _decision(
            data.get("final_decision"), 2, "phase2_missing_final_decision", aliases,
            result.violations, None,
        )
    elif phase == 3:
        result.parsed = _decision(
            data.get("final_output"), 3, "phase3_missing_final_output", aliases,
            result.violations, known_evidence_ids,
        )
    else:
        raise ValueError(f"Unsupported phase: {phase}")
    if any(v.category == FORMAT for v in result.violations):
        result.parsed = None
    return result
