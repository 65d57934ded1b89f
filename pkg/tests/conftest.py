"""Shared fixtures: synthetic signals, manifests, prior tables, scripts and mock LLM clients."""

import json
from unittest.mock import MagicMock, Mock, patch

import numpy as np
import pytest
import soundfile as sf

from adept_agent.features import AudioSignal
from adept_agent.labels import (
    AlignedWord,
    LabelSet,
    UtteranceRecord,
    VoteRecord,
    canonicalize_emotion,
    construct_labels,
)
from adept_agent.prior import build_prior

SR = 16000
TRANSCRIPT = "you lied to me and i lost everything"


def sine(f0=200.0, duration=1.0, amplitude=0.5, sr=SR):
    t = np.arange(int(round(duration * sr))) / sr
    return AudioSignal(amplitude * np.sin(2 * np.pi * f0 * t), sr)


def sawtooth(f0=200.0, duration=1.0, amplitude=0.5, sr=SR):
    t = np.arange(int(round(duration * sr))) / sr
    return AudioSignal(amplitude * (2.0 * ((t * f0) % 1.0) - 1.0), sr)


def burst_signal(bursts=((0.6, 0.8), (1.8, 2.0)), duration=2.6, f0=200.0, base=0.05, peak=0.6, sr=SR):
    """200 Hz tone at a low level with loud bursts on the given spans."""
    t = np.arange(int(round(duration * sr))) / sr
    envelope = np.full_like(t, base)
    for t_s, t_e in bursts:
        envelope[int(round(t_s * sr)):int(round(t_e * sr))] = peak
    return AudioSignal(envelope * np.sin(2 * np.pi * f0 * t), sr)


def alignment_for(transcript=TRANSCRIPT, start=0.2, word=0.2, gap=0.05):
    words = []
    t = start
    for w in transcript.split():
        words.append(AlignedWord(w, round(t, 2), round(t + word, 2)))
        t += word + gap
    return tuple(words)


def make_record(audio_path, uid="utt0001", transcript=TRANSCRIPT, votes=("Anger", "Anger", "Sadness"),
                speaker=None):
    votes = tuple(votes)
    return UtteranceRecord(
        id=uid,
        audio=str(audio_path),
        transcript=transcript,
        alignment=alignment_for(transcript),
        votes=VoteRecord(uid, votes),
        labels=construct_labels(votes),
        speaker=speaker,
    )


def manifest_line(uid, audio, transcript=TRANSCRIPT, votes=("Anger", "Anger", "Sadness"), speaker=None):
    row = {
        "id": uid,
        "audio": audio,
        "transcript": transcript,
        "alignment": [w.to_dict() for w in alignment_for(transcript)],
        "votes": list(votes),
    }
    if speaker is not None:
        row["speaker"] = speaker
    return json.dumps(row, sort_keys=True)


@pytest.fixture
def tone_wav(tmp_path):
    """2.6 s harmonic tone with bursts, written as 16-bit WAV."""
    signal = burst_signal()
    path = tmp_path / "tone.wav"
    sf.write(path, signal.samples, signal.sr, subtype="PCM_16")
    return path


@pytest.fixture
def utterance(tone_wav):
    return make_record(tone_wav)


def label_set(primary, minor=()):
    return LabelSet(frozenset(canonicalize_emotion(e) for e in primary),
                    frozenset(canonicalize_emotion(e) for e in minor))


@pytest.fixture
def prior_table():
    sets = [
        label_set(["Anger"], ["Sadness"]),
        label_set(["Anger"], ["Contempt", "Disgust"]),
        label_set(["Happiness"], ["Surprise"]),
        label_set(["Sadness"], ["Neutral"]),
        label_set(["Neutral"]),
        label_set(["Happiness", "Neutral"]),
    ]
    return build_prior(sets)


@pytest.fixture
def legal_script():
    """Four phase-2 calls, prediction {Anger} with minor {Sadness}, no violations."""
    pool = ["Anger", "Sadness", "Neutral"]
    return {
        "phase1": [{"output": {
            "candidate_pool": [
                {"emotion": "Anger", "confidence": "high"},
                {"emotion": "Sadness", "confidence": "mid"},
                {"emotion": "Neutral", "confidence": "low"},
            ],
            "tie_prediction": None,
            "reasoning": "Accusatory wording and a raised voice; loss words point to sadness.",
        }}],
        "phase2": [
            {"tool": "StructuralPriorTool", "arguments": {"candidates": pool, "intent": "verify", "anchor": "Anger"}},
            {"tool": "run_semantic_gate", "arguments": {"emotion": "Anger"}},
            {"tool": "run_semantic_gate", "arguments": {"emotion": "Sadness"}},
            {"tool": "analyze_acoustic_segment", "arguments": {"start": 0.5, "end": 0.9}},
            {"output": {"final_decision": {"primary_emotions": ["Anger"], "minor_emotions": ["Sadness"],
                                           "resolved_tie": None}}},
        ],
        "phase3": [{"output": {"final_output": {
            "primary_emotions": ["Anger"],
            "minor_emotions": ["Sadness"],
            "evidence_ids": ["obs-2", "obs-3", "obs-4"],
            "reasoning": "Blame cues (obs-2), loss cues (obs-3) and a loud span (obs-4).",
        }}}],
    }


@pytest.fixture
def mock_llm_client():
    """Mock LLM client returning canned ChatReply objects."""
    from adept_agent.llm_client import ChatReply

    client = Mock()
    client.complete.return_value = ChatReply(content="{}")
    return client


@pytest.fixture
def mock_openai_client():
    """Mock OpenAI SDK client."""
    with patch("openai.OpenAI") as mock_class:
        mock_client = MagicMock()
        message = MagicMock()
        message.content = "Test response"
        message.tool_calls = None
        mock_client.chat.completions.create.return_value = MagicMock(choices=[MagicMock(message=message)])
        mock_class.return_value = mock_client
        yield mock_client


@pytest.fixture
def mock_anthropic_client():
    """Mock Anthropic SDK client."""
    with patch("anthropic.Anthropic") as mock_class:
        mock_client = MagicMock()
        block = MagicMock()
        block.type = "text"
        block.text = "Test response"
        mock_client.messages.create.return_value = MagicMock(content=[block])
        mock_class.return_value = mock_client
        yield mock_client
