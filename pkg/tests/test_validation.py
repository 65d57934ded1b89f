"""Tests for phase output parsing and integrity checks."""

import json

import pytest

from adept_agent.labels import Emotion
from adept_agent.validation import (
    DIAGNOSTIC,
    FORMAT,
    PHASE,
    Decision,
    Phase1Output,
    Violation,
    strip_fences,
    validate_phase_output,
)

POOL = {
    "candidate_pool": [
        {"emotion": "Anger", "confidence": "high"},
        {"emotion": "sad", "confidence": "Mid"},
    ],
    "tie_prediction": None,
    "reasoning": "raised voice and blame words",
}


def codes(result):
    return [v.code for v in result.violations]


class TestPhase1:
    """Test coarse hypothesis parsing."""

    def test_clean_pool(self):
        result = validate_phase_output(1, json.dumps(POOL))
        assert result.ok
        assert result.violations == []
        pool = result.parsed.candidate_pool
        assert [c.emotion for c in pool] == [Emotion.Anger, Emotion.Sadness]
        assert pool[1].confidence == "mid"

    def test_code_fences_allowed(self):
        result = validate_phase_output(1, "```json\n" + json.dumps(POOL) + "\n```")
        assert result.ok

    def test_forbidden_field_is_phase_violation(self):
        data = dict(POOL, final_prediction=["Anger"])
        result = validate_phase_output(1, json.dumps(data))
        assert result.ok
        assert result.violations == [Violation("phase1_forbidden_field", 1, PHASE, "final_prediction")]

    def test_nested_forbidden_field(self):
        data = dict(POOL, notes={"primary_emotions": ["Anger"]})
        assert "phase1_forbidden_field" in codes(validate_phase_output(1, json.dumps(data)))

    def test_semantic_leak(self):
        data = dict(POOL, reasoning="Primary: Anger because of the shouting")
        result = validate_phase_output(1, json.dumps(data))
        assert codes(result) == ["phase1_semantic_leak"]
        data = dict(POOL, reasoning="I conclude that this is anger")
        assert codes(validate_phase_output(1, json.dumps(data))) == ["phase1_semantic_leak"]

    def test_empty_pool_is_format_violation(self):
        result = validate_phase_output(1, json.dumps({"candidate_pool": []}))
        assert not result.ok
        assert result.parsed is None
        assert result.violations[0].category == FORMAT

    def test_unknown_label_fails_format(self):
        data = {"candidate_pool": [{"emotion": "Boredom"}]}
        result = validate_phase_output(1, json.dumps(data))
        assert codes(result) == ["invalid_label"]
        assert result.parsed is None

    def test_bare_strings_and_duplicates(self):
        data = {"candidate_pool": ["Fear", "fear", "Neutral"], "tie_prediction": ["Neutral", "Fear"]}
        result = validate_phase_output(1, json.dumps(data))
        assert result.ok
        assert [c.emotion for c in result.parsed.candidate_pool] == [Emotion.Fear, Emotion.Neutral]
        assert result.parsed.tie_prediction == (Emotion.Fear, Emotion.Neutral)
        assert codes(result) == ["duplicate_candidate"]
        assert result.violations[0].category == DIAGNOSTIC

    def test_bad_confidence_is_diagnostic(self):
        data = {"candidate_pool": [{"emotion": "Fear", "confidence": "very"}]}
        result = validate_phase_output(1, json.dumps(data))
        assert result.ok
        assert result.parsed.candidate_pool[0].confidence is None
        assert codes(result) == ["invalid_confidence"]

    def test_round_trip(self):
        parsed = validate_phase_output(1, json.dumps(POOL)).parsed
        assert Phase1Output.from_dict(parsed.to_dict()) == parsed


class TestDecisions:
    """Test phase-2 and phase-3 decision blocks."""

    def test_phase2_decision(self):
        raw = json.dumps({"final_decision": {"primary_emotions": ["Anger"], "minor_emotions": ["Anger", "Fear"]}})
        result = validate_phase_output(2, raw)
        assert result.parsed.primary == {Emotion.Anger}
        assert result.parsed.minor == {Emotion.Fear}

    def test_phase2_missing_block(self):
        result = validate_phase_output(2, json.dumps({"answer": "Anger"}))
        assert codes(result) == ["phase2_missing_final_decision"]
        assert not result.ok

    def test_phase3_evidence_ids_from_list_and_text(self):
        raw = json.dumps({"final_output": {
            "primary_emotions": ["Sadness"],
            "evidence_ids": ["obs-2"],
            "reasoning": "loss cues in obs-3 and obs-2",
        }})
        result = validate_phase_output(3, raw, known_evidence_ids=["obs-2", "obs-3"])
        assert result.parsed.evidence_ids == ("obs-2", "obs-3")
        assert result.violations == []

    def test_phase3_unknown_citation(self):
        raw = json.dumps({"final_output": {"primary_emotions": ["Sadness"], "evidence_ids": ["obs-1"]}})
        result = validate_phase_output(3, raw, known_evidence_ids=["obs-2"])
        assert result.ok
        assert result.violations == [Violation("unknown_evidence_id", 3, DIAGNOSTIC, "obs-1")]

    def test_phase3_empty_primary(self):
        raw = json.dumps({"final_output": {"primary_emotions": []}})
        assert codes(validate_phase_output(3, raw)) == ["phase3_missing_final_output"]

    def test_decision_round_trip(self):
        decision = Decision(frozenset({Emotion.Fear}), frozenset({Emotion.Sadness}), "x", ("obs-1",), True)
        data = decision.to_dict()
        assert data["primary_emotions"] == ["Fear"]
        assert Decision.from_dict(data) == decision


class TestMalformed:
    """Test non-JSON and non-object messages."""

    def test_invalid_json(self):
        result = validate_phase_output(2, "Anger, probably")
        assert codes(result) == ["invalid_json"]
        assert result.parsed is None

    def test_not_an_object(self):
        assert codes(validate_phase_output(3, "[1, 2]")) == ["not_an_object"]

    def test_none_message(self):
        assert codes(validate_phase_output(1, None)) == ["invalid_json"]

    def test_unknown_phase(self):
        with pytest.raises(ValueError):
            validate_phase_output(4, "{}")

    def test_strip_fences(self):
        assert strip_fences("```\n{}\n```") == "{}"
