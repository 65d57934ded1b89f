"""Deterministic synthetic corpora for desk-scale runs and oracle tests.

Every utterance gets multi-annotator votes drawn to hit a target tie rate,
a transcript carrying literal appraisal cues, a word alignment on a 10 ms
grid, and (optionally) a harmonic-tone WAV whose energy bursts are written
to a sidecar truth file.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import soundfile as sf
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .labels import ALL_EMOTIONS, Emotion, OTHER

logger = logging.getLogger(__name__)

DEFAULT_BASE_RATES: Dict[str, float] = {
    "Anger": 0.12,
    "Sadness": 0.12,
    "Happiness": 0.15,
    "Surprise": 0.10,
    "Fear": 0.07,
    "Disgust": 0.07,
    "Contempt": 0.07,
    "Neutral": 0.30,
}
DEFAULT_MINOR_COUNTS: Dict[int, float] = {0: 0.35, 1: 0.35, 2: 0.2, 3: 0.1}

TEMPLATES: Dict[Emotion, Tuple[str, ...]] = {
    Emotion.Anger: (
        "you lied to me and that is not fair",
        "stop it right there you will not cheat me",
        "enough of this it is your fault",
    ),
    Emotion.Sadness: (
        "i lost everything and nothing matters anymore",
        "it's over and i miss her so much",
        "i can't do anything it hurts",
    ),
    Emotion.Happiness: (
        "we won the game this is great",
        "thank you so much i love it",
        "what a wonderful day it was",
    ),
    Emotion.Surprise: (
        "wow i never seen anything like that",
        "suddenly the lights went out",
        "no way did that really happen",
    ),
    Emotion.Fear: (
        "help me we have to get out now",
        "hurry and hide before they come",
        "i can't stop shaking please help",
    ),
    Emotion.Disgust: (
        "that smell is gross get it away",
        "this food is disgusting and awful",
        "stay away from that dirty thing",
    ),
    Emotion.Contempt: (
        "you are pathetic and everyone knows it",
        "better not pretend your work matters",
        "they are liars and i decide who stays",
    ),
    Emotion.Neutral: (
        "the meeting starts at ten tomorrow",
        "please put the files on the desk",
        "the train leaves from platform four",
    ),
}

F0_BY_EMOTION: Dict[Emotion, float] = {
    Emotion.Anger: 230.0,
    Emotion.Sadness: 140.0,
    Emotion.Happiness: 250.0,
    Emotion.Surprise: 270.0,
    Emotion.Fear: 240.0,
    Emotion.Disgust: 170.0,
    Emotion.Contempt: 160.0,
    Emotion.Neutral: 180.0,
}
BURST_EMOTIONS = frozenset({Emotion.Anger, Emotion.Happiness, Emotion.Surprise, Emotion.Fear})

LEAD_CS = 20
GAP_CS = 10
TAIL_CS = 20
TONE_AMPLITUDE = 0.25
BURST_GAIN = 3.0
NOISE_STD = 0.001


class FixtureSpec(BaseModel):
    """Recipe for a synthetic corpus."""

    model_config = ConfigDict(extra="forbid")

    n: int = Field(default=50, ge=0)
    seed: int = 0
    tie_rate: float = Field(default=0.18, ge=0.0, le=1.0)
    base_rates: Dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_BASE_RATES))
    minor_counts: Dict[int, float] = Field(default_factory=lambda: dict(DEFAULT_MINOR_COUNTS))
    other_vote_rate: float = Field(default=0.1, ge=0.0, le=1.0)
    sample_rate: int = Field(default=16000, ge=8000, le=48000)
    speakers: int = Field(default=2, ge=1)
    audio: bool = True
    test_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)

    @field_validator("base_rates")
    @classmethod
    def _known_emotions(cls, value: Dict[str, float]) -> Dict[str, float]:
        names = {e.name for e in ALL_EMOTIONS}
        unknown = set(value) - names
        if unknown:
            raise ValueError(f"unknown emotions in base_rates: {sorted(unknown)}")
        if sum(value.values()) <= 0:
            raise ValueError("base_rates must have positive mass")
        return value

    @field_validator("minor_counts")
    @classmethod
    def _minor_range(cls, value: Dict[int, float]) -> Dict[int, float]:
        if any(k < 0 or k > 5 for k in value) or sum(value.values()) <= 0:
            raise ValueError("minor_counts keys must lie in 0..5 with positive mass")
        return value


@dataclass
class FixtureResult:
    manifest: Path
    truth: Path
    n: int
    n_ties: int
    script: Optional[Path] = None


def harmonic_tone(f0: float, t: np.ndarray, amplitude: float = TONE_AMPLITUDE, harmonics: int = 4) -> np.ndarray:
    """Sum of the first harmonics with 1/k amplitudes, peak-scaled to ``amplitude``."""
    weights = 1.0 / np.arange(1, harmonics + 1)
    wave = sum(w * np.sin(2 * np.pi * f0 * (k + 1) * t) for k, w in enumerate(weights))
    return amplitude * wave / weights.sum()


def _probabilities(table: Dict, keys: Sequence) -> np.ndarray:
    p = np.array([float(table.get(k, 0.0)) for k in keys])
    return p / p.sum()


def draw_votes(rng: np.random.Generator, spec: FixtureSpec, tie: bool) -> Tuple[List[str], List[Emotion]]:
    """Votes whose plurality yields one primary (or two tied primaries) plus sampled minors."""
    emotions = list(ALL_EMOTIONS)
    p = _probabilities({Emotion[k]: v for k, v in spec.base_rates.items()}, emotions)
    n_primary = 2 if tie else 1
    primary = [emotions[i] for i in rng.choice(len(emotions), size=n_primary, replace=False, p=p)]

    sizes = sorted(spec.minor_counts)
    n_minor = int(sizes[rng.choice(len(sizes), p=_probabilities(spec.minor_counts, sizes))])
    rest = [e for e in emotions if e not in primary]
    n_minor = min(n_minor, len(rest))
    minor = [rest[i] for i in rng.choice(len(rest), size=n_minor, replace=False)] if n_minor else []

    top = int(rng.integers(2, 4))
    votes: List[str] = []
    for e in primary:
        votes.extend([e.name] * top)
    for e in minor:
        votes.extend([e.name] * int(rng.integers(1, top)))
    if top > 1 and rng.random() < spec.other_vote_rate:
        votes.append(OTHER)
    order = rng.permutation(len(votes))
    return [votes[i] for i in order], primary


def word_timeline(words: Sequence[str]) -> Tuple[List[Tuple[float, float]], float]:
    """Word spans on a 10 ms grid and the total duration."""
    spans = []
    cursor = LEAD_CS
    for word in words:
        length = 25 + 3 * len(word)
        spans.append((cursor / 100, (cursor + length) / 100))
        cursor += length + GAP_CS
    return spans, (cursor - GAP_CS + TAIL_CS) / 100


def render_audio(
    spans: Sequence[Tuple[float, float]],
    duration: float,
    f0: float,
    bursts: Sequence[Tuple[float, float]],
    sr: int,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration * sr))
    t = np.arange(n) / sr
    out = rng.normal(0.0, NOISE_STD, n)
    tone = harmonic_tone(f0, t)
    for t_s, t_e in spans:
        lo, hi = int(round(t_s * sr)), int(round(t_e * sr))
        out[lo:hi] += tone[lo:hi]
    for t_s, t_e in bursts:
        lo, hi = int(round(t_s * sr)), int(round(t_e * sr))
        out[lo:hi] += (BURST_GAIN - 1.0) * tone[lo:hi]
    return np.clip(out, -1.0, 1.0)


def default_script() -> Dict:
    """Per-phase scripted policy that is legal on every generated utterance."""
    pool = ["Neutral", "Happiness", "Sadness"]
    return {
        "phase1": [{"output": {
            "candidate_pool": [
                {"emotion": "Neutral", "confidence": "high"},
                {"emotion": "Happiness", "confidence": "mid"},
                {"emotion": "Sadness", "confidence": "low"},
            ],
            "tie_prediction": None,
            "reasoning": "Flat delivery with a few evaluative words; check valence cues.",
        }}],
        "phase2": [
            {"tool": "StructuralPriorTool", "arguments": {"candidates": pool, "intent": "verify", "anchor": "Neutral"}},
            {"tool": "run_semantic_gate", "arguments": {"emotion": "Happiness"}},
            {"tool": "run_semantic_gate", "arguments": {"emotion": "Sadness"}},
            {"tool": "find_acoustic_hotspots", "arguments": {"focus_type": "energy_burst", "top_n": 2}},
            {"tool": "analyze_acoustic_segment", "arguments": {"start": 0.2, "end": 0.6}},
            {"tool": "check_semantic_alignment", "arguments": {}},
            {"branch": {
                "when": {"tool": "check_semantic_alignment", "path": "result.verdict", "equals": "Conflict"},
                "then": [{"tool": "replay_audio", "arguments": {"reason": "conflict", "focus_points": [[0.2, 0.6]]}}],
            }},
            {"output": {"final_decision": {"primary_emotions": ["Neutral"], "minor_emotions": ["Happiness"],
                                           "resolved_tie": None}}},
        ],
        "phase3": [{"output": {"final_output": {
            "primary_emotions": ["Neutral"],
            "minor_emotions": ["Happiness"],
            "evidence_ids": ["obs-2", "obs-4"],
            "reasoning": "Transcript cues (obs-2) and energy profile (obs-4) support a neutral reading.",
        }}}],
    }


def _dump(rows: Sequence[Dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def write_fixture(spec: FixtureSpec, out_dir: Union[str, Path], script: bool = True) -> FixtureResult:
    """
    Generate a synthetic corpus under ``out_dir``.

    Writes manifest.jsonl, truth.jsonl, audio/*.wav (when spec.audio), and
    train.jsonl/test.jsonl when spec.test_fraction > 0. Output bytes depend
    only on ``spec``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    n_ties = int(round(spec.tie_rate * spec.n))
    tie_ids = set(rng.permutation(spec.n)[:n_ties].tolist()) if spec.n else set()

    if spec.audio:
        (out / "audio").mkdir(exist_ok=True)

    rows: List[Dict] = []
    truth: List[Dict] = []
    for i in range(spec.n):
        uid = f"utt{i:04d}"
        votes, primary = draw_votes(rng, spec, i in tie_ids)
        anchor = primary[0]
        templates = TEMPLATES[anchor]
        transcript = templates[int(rng.integers(len(templates)))]
        words = transcript.split()
        spans, duration = word_timeline(words)

        bursts: List[Tuple[float, float]] = []
        if anchor in BURST_EMOTIONS:
            bursts.append(spans[int(rng.integers(len(spans)))])
        f0 = F0_BY_EMOTION[anchor]
        audio_rel = f"audio/{uid}.wav"
        if spec.audio:
            samples = render_audio(spans, duration, f0, bursts, spec.sample_rate, rng)
            sf.write(out / audio_rel, samples, spec.sample_rate, subtype="PCM_16")

        rows.append({
            "id": uid,
            "audio": audio_rel,
            "transcript": transcript,
            "alignment": [{"w": w, "s": s, "e": e} for w, (s, e) in zip(words, spans)],
            "votes": votes,
            "speaker": f"spk{i % spec.speakers}",
        })
        truth.append({
            "id": uid,
            "f0": f0,
            "duration": duration,
            "bursts": [list(b) for b in bursts],
            "primary": [e.name for e in sorted(primary, key=int)],
        })

    if not rows:
        logger.warning("Fixture has no utterances; wrote an empty manifest")
    manifest = out / "manifest.jsonl"
    truth_path = out / "truth.jsonl"
    _dump(rows, manifest)
    _dump(truth, truth_path)

    if spec.test_fraction > 0 and rows:
        split = np.random.default_rng(spec.seed + 1).permutation(len(rows))
        n_test = int(round(spec.test_fraction * len(rows)))
        test_idx = set(split[:n_test].tolist())
        _dump([r for j, r in enumerate(rows) if j not in test_idx], out / "train.jsonl")
        _dump([r for j, r in enumerate(rows) if j in test_idx], out / "test.jsonl")

    script_path = None
    if script:
        script_path = out / "script.json"
        with open(script_path, "w", encoding="utf-8") as f:
            json.dump(default_script(), f, indent=2, sort_keys=True)
    return FixtureResult(manifest, truth_path, len(rows), len(tie_ids), script_path)
