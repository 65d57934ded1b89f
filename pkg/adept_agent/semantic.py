"""Literal-first semantic verification over transcripts.

A deterministic cue matcher over the 7-factor appraisal lexicon. Every span
it reports is a verbatim substring of the transcript at the recorded offsets.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Pattern, Sequence, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .labels import Emotion, canonicalize_emotion

logger = logging.getLogger(__name__)

FACTORS: Tuple[str, ...] = (
    "Famil_Sudd",
    "Neg_PosConseq",
    "OthSelf_Causation",
    "LoHi_CoPow",
    "Moral_Unfair",
    "Urgency",
    "With_FightAct",
)

DEFAULT_SCHEMA_PATH = Path(__file__).parent / "data" / "semantic_schema.json"

INSUFFICIENT = "insufficient_evidence"
NEGATIVE_FAMILY = frozenset(
    {Emotion.Anger, Emotion.Sadness, Emotion.Fear, Emotion.Disgust, Emotion.Contempt}
)
POSITIVE_FAMILY = frozenset({Emotion.Happiness, Emotion.Surprise})


class FactorCheck(BaseModel):
    factor: str
    polarity: str


class DivergenceCheck(BaseModel):
    factor: str
    favors: Dict[str, str]


class EmotionProfile(BaseModel):
    verify: List[FactorCheck] = Field(default_factory=list)
    compare: Dict[str, List[DivergenceCheck]] = Field(default_factory=dict)


class SchemaFile(BaseModel):
    version: str
    lexicon: Dict[str, Dict[str, List[str]]]
    profiles: Dict[str, EmotionProfile]
    polysemous_interjections: List[str] = Field(default_factory=list)

    @field_validator("lexicon")
    @classmethod
    def _seven_factors(cls, value):
        if set(value) != set(FACTORS):
            raise ValueError(f"lexicon must define exactly the factors {', '.join(FACTORS)}")
        return value

    @model_validator(mode="after")
    def _profiles_reference_lexicon(self):
        for emotion, profile in self.profiles.items():
            canonicalize_emotion(emotion, aliases={})
            for check in profile.verify:
                if check.polarity not in self.lexicon.get(check.factor, {}):
                    raise ValueError(f"{emotion}: unknown check {check.factor}/{check.polarity}")
            for other, checks in profile.compare.items():
                canonicalize_emotion(other, aliases={})
                for check in checks:
                    for polarity in check.favors:
                        if polarity not in self.lexicon.get(check.factor, {}):
                            raise ValueError(f"{emotion}/{other}: unknown polarity {polarity}")
        return self


def _cue_pattern(cue: str) -> Pattern:
    words = [re.escape(w) for w in cue.split()]
    return re.compile(r"(?<!\w)" + r"\s+".join(words) + r"(?!\w)", re.IGNORECASE)


@dataclass(frozen=True)
class SemanticEvidence:
    factor: Optional[str]
    span: Optional[str]
    start: int = -1
    end: int = -1
    polarity: Optional[str] = None

    @classmethod
    def insufficient(cls) -> "SemanticEvidence":
        return cls(factor=None, span=None, polarity=INSUFFICIENT)

    @property
    def is_insufficient(self) -> bool:
        return self.polarity == INSUFFICIENT

    def to_dict(self) -> Dict:
        if self.is_insufficient:
            return {"result": INSUFFICIENT}
        return {
            "factor": self.factor,
            "span": self.span,
            "offsets": [self.start, self.end],
            "polarity": self.polarity,
        }


class SemanticSchema:
    """Loaded lexicon, emotion profiles and interjection list. Immutable after load."""

    def __init__(self, data: SchemaFile):
        self.data = data
        self.version = data.version
        self._patterns: Dict[str, List[Tuple[str, str, Pattern]]] = {}
        for factor in FACTORS:
            cues = [
                (polarity, cue, _cue_pattern(cue))
                for polarity, words in data.lexicon[factor].items()
                for cue in words
            ]
            self._patterns[factor] = cues
        self._interjections = [(cue, _cue_pattern(cue)) for cue in data.polysemous_interjections]

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "SemanticSchema":
        path = Path(path) if path else DEFAULT_SCHEMA_PATH
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        try:
            return cls(SchemaFile.model_validate(raw))
        except ValidationError as e:
            raise ValueError(f"Invalid semantic schema {path}: {e}") from e

    def profile(self, emotion: Emotion) -> EmotionProfile:
        return self.data.profiles.get(emotion.name, EmotionProfile())

    def match_factor(self, factor: str, transcript: str) -> List[SemanticEvidence]:
        """All non-overlapping cue hits for one factor; longer cues win overlaps."""
        hits = []
        for polarity, cue, pattern in self._patterns[factor]:
            for m in pattern.finditer(transcript):
                hits.append((m.start(), m.end(), polarity))
        hits.sort(key=lambda h: (-(h[1] - h[0]), h[0]))
        taken: List[Tuple[int, int]] = []
        kept = []
        for start, end, polarity in hits:
            if any(start < e and s < end for s, e in taken):
                continue
            taken.append((start, end))
            kept.append(SemanticEvidence(factor, transcript[start:end], start, end, polarity))
        return sorted(kept, key=lambda ev: (ev.start, ev.end))

    def interjections(self, transcript: str) -> List[SemanticEvidence]:
        hits = []
        for cue, pattern in sorted(self._interjections, key=lambda c: -len(c[0])):
            for m in pattern.finditer(transcript):
                if any(m.start() < h.end and h.start < m.end() for h in hits):
                    continue
                hits.append(SemanticEvidence("interjection", m.group(0), m.start(), m.end(), "polysemous"))
        return sorted(hits, key=lambda ev: ev.start)

    def divergence_checks(self, e1: Emotion, e2: Emotion) -> List[DivergenceCheck]:
        """Explicit table entry for the pair, else factors where the two profiles differ."""
        for a, b in ((e1, e2), (e2, e1)):
            explicit = self.profile(a).compare.get(b.name)
            if explicit:
                return explicit
        p1 = {(c.factor, c.polarity) for c in self.profile(e1).verify}
        p2 = {(c.factor, c.polarity) for c in self.profile(e2).verify}
        favors: Dict[str, Dict[str, str]] = {}
        for emotion, own, other in ((e1, p1, p2), (e2, p2, p1)):
            for factor, polarity in own - other:
                favors.setdefault(factor, {})[polarity] = emotion.name
        return [
            DivergenceCheck(factor=f, favors=favors[f]) for f in FACTORS if f in favors
        ]


_default_schema: Optional[SemanticSchema] = None


def default_schema() -> SemanticSchema:
    global _default_schema
    if _default_schema is None:
        _default_schema = SemanticSchema.load()
    return _default_schema


def verify_semantic_evidence(
    emotion: Union[Emotion, str], transcript: str, schema: Optional[SemanticSchema] = None
) -> List[SemanticEvidence]:
    """
    Literal cue search over the factors in an emotion's profile.

    Returns every matched span, or a single insufficient_evidence sentinel
    when no checked factor matched anything.
    """
    if not transcript or not transcript.strip():
        raise ValueError("transcript must be non-empty")
    schema = schema or default_schema()
    emotion = canonicalize_emotion(emotion)
    evidence: List[SemanticEvidence] = []
    for check in schema.profile(emotion).verify:
        evidence.extend(
            ev for ev in schema.match_factor(check.factor, transcript)
            if ev.polarity == check.polarity
        )
    if not evidence:
        return [SemanticEvidence.insufficient()]
    return sorted(evidence, key=lambda ev: (ev.start, ev.end, ev.factor))


@dataclass
class FactorVerdict:
    factor: str
    favors: Optional[Emotion]
    evidence: List[SemanticEvidence]

    def to_dict(self) -> Dict:
        return {
            "factor": self.factor,
            "favors": self.favors.name if self.favors else None,
            "evidence": [ev.to_dict() for ev in self.evidence],
        }


@dataclass
class DivergenceReport:
    e1: Emotion
    e2: Emotion
    factors: List[FactorVerdict]
    redirect_to_acoustic: bool = False
    interjections: List[SemanticEvidence] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "emotions": [self.e1.name, self.e2.name],
            "factors": [f.to_dict() for f in self.factors],
            "redirect_to_acoustic": self.redirect_to_acoustic,
            "interjections": [ev.to_dict() for ev in self.interjections],
        }


def compare_emotions(
    e1: Union[Emotion, str],
    e2: Union[Emotion, str],
    transcript: str,
    schema: Optional[SemanticSchema] = None,
) -> DivergenceReport:
    """
    Evaluate only the factors on which two emotion profiles diverge.

    A factor favors whichever emotion its matched cues point to more often,
    or neither. A polysemous interjection with no decisive factor sets
    redirect_to_acoustic.
    """
    schema = schema or default_schema()
    e1, e2 = canonicalize_emotion(e1), canonicalize_emotion(e2)
    if e1 == e2:
        raise ValueError("compare_emotions requires two different emotions")
    if not transcript or not transcript.strip():
        raise ValueError("transcript must be non-empty")

    verdicts = []
    for check in schema.divergence_checks(e1, e2):
        hits = [
            ev for ev in schema.match_factor(check.factor, transcript) if ev.polarity in check.favors
        ]
        votes = {e1: 0, e2: 0}
        for ev in hits:
            target = canonicalize_emotion(check.favors[ev.polarity])
            if target in votes:
                votes[target] += 1
        if votes[e1] > votes[e2]:
            favors: Optional[Emotion] = e1
        elif votes[e2] > votes[e1]:
            favors = e2
        else:
            favors = None
        verdicts.append(FactorVerdict(check.factor, favors, hits))
    verdicts.sort(key=lambda v: FACTORS.index(v.factor))

    interjections = schema.interjections(transcript)
    decisive = any(v.favors is not None for v in verdicts)
    return DivergenceReport(
        e1=e1,
        e2=e2,
        factors=verdicts,
        redirect_to_acoustic=bool(interjections) and not decisive,
        interjections=interjections,
    )


@dataclass
class AlignmentVerdict:
    verdict: str
    polarity: Optional[str]
    cues: List[SemanticEvidence]
    reasons: List[str]

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict,
            "lexical_polarity": self.polarity,
            "cues": [ev.to_dict() for ev in self.cues],
            "reasons": list(self.reasons),
        }


def lexical_polarity(transcript: str, schema: Optional[SemanticSchema] = None) -> Tuple[Optional[str], List[SemanticEvidence]]:
    schema = schema or default_schema()
    cues = schema.match_factor("Neg_PosConseq", transcript)
    positive = sum(1 for ev in cues if ev.polarity == "positive")
    negative = sum(1 for ev in cues if ev.polarity == "negative")
    if positive > negative:
        return "positive", cues
    if negative > positive:
        return "negative", cues
    return None, cues


def _prosody(observations: Sequence) -> Tuple[bool, bool, List[str]]:
    """(agitated, flat, reasons) over acoustic observations' bins."""
    agitated_reasons = []
    flat = bool(observations)
    for obs in observations:
        if obs.level("pitch_velocity") == "High":
            agitated_reasons.append(f"pitch_velocity High at {obs.t_s:.2f}-{obs.t_e:.2f}s")
        for metric in ("rms", "energy_burstiness"):
            if obs.volatility(metric) == "Volatile":
                agitated_reasons.append(f"{metric} Volatile at {obs.t_s:.2f}-{obs.t_e:.2f}s")
            elif obs.level(metric) == "High":
                agitated_reasons.append(f"{metric} High at {obs.t_s:.2f}-{obs.t_e:.2f}s")
        for reading in obs.readings.values():
            if reading.level == "High" or reading.volatility == "Volatile":
                flat = False
    return bool(agitated_reasons), flat and not agitated_reasons, agitated_reasons


def check_semantic_alignment(
    observations: Sequence,
    transcript: str,
    hypotheses: Optional[Iterable[Union[Emotion, str]]] = None,
    schema: Optional[SemanticSchema] = None,
) -> AlignmentVerdict:
    """
    Pragmatic consistency between lexical valence and prosody bins.

    Conflict when the words are positive but prosody is agitated (pitch
    velocity High, or energy Volatile/High) and either no hypotheses were
    given or a negative-family hypothesis is active; also when the words are
    negative, prosody is flat and a positive-family hypothesis is active.
    Otherwise Consistent, or Unknown without lexical polarity.
    """
    if not transcript or not transcript.strip():
        raise ValueError("transcript must be non-empty")
    polarity, cues = lexical_polarity(transcript, schema)
    if polarity is None:
        return AlignmentVerdict("Unknown", None, cues, ["no lexical polarity"])

    active = {canonicalize_emotion(h) for h in hypotheses} if hypotheses else set()
    agitated, flat, reasons = _prosody(observations)
    if polarity == "positive" and agitated and (not active or active & NEGATIVE_FAMILY):
        return AlignmentVerdict("Conflict", polarity, cues, ["positive wording"] + reasons)
    if polarity == "negative" and flat and active & POSITIVE_FAMILY:
        return AlignmentVerdict(
            "Conflict", polarity, cues, ["negative wording", "flat prosody", "positive hypothesis"]
        )
    return AlignmentVerdict("Consistent", polarity, cues, reasons)
