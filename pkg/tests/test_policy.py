"""Tests for scripted, heuristic and remote policies."""

import json
from unittest.mock import Mock, call

import pytest

from adept_agent.errors import MalformedPolicyMessage, PolicyTimeout, ScriptExhausted, TransportError
from adept_agent.llm_client import ChatReply, HTTPChatClient, OpenAIClient, ToolCallRequest
from adept_agent.policy import (
    HeuristicPolicy,
    PolicyRequest,
    RemotePolicy,
    ScriptedPolicy,
    build_policy_factory,
)
from adept_agent.tools import FIND_HOTSPOTS, PRIOR_TOOL, SEMANTIC_GATE
from adept_agent.validation import validate_phase_output
from tests.conftest import TRANSCRIPT


def request(phase, observations=None, tools=True, transcript=TRANSCRIPT):
    return PolicyRequest(
        phase=phase,
        messages=[{"role": "system", "content": "base"}, {"role": "user", "content": "go"}],
        tools=[{"type": "function"}] if tools else [],
        observations=observations or [],
        utterance_id="utt0001",
        transcript=transcript,
    )


class TestScriptedPolicy:
    """Tests for the script replayer."""

    def test_phase_keyed_script(self, legal_script):
        policy = ScriptedPolicy(legal_script)
        first = policy.act(request(1))
        assert not first.is_tool_call
        assert json.loads(first.text)["candidate_pool"][0]["emotion"] == "Anger"
        action = policy.act(request(2))
        assert action.is_tool_call
        assert action.tool_name == PRIOR_TOOL
        assert action.arguments["anchor"] == "Anger"

    def test_flat_script_spans_phases(self):
        policy = ScriptedPolicy([{"raw": "one"}, {"tool": SEMANTIC_GATE, "arguments": {"emotion": "Fear"}, "id": "c1"}])
        assert policy.act(request(1)).text == "one"
        action = policy.act(request(2))
        assert action.call_id == "c1"

    def test_exhausted(self):
        policy = ScriptedPolicy({"phase1": []})
        with pytest.raises(ScriptExhausted):
            policy.act(request(1))
        assert issubclass(ScriptExhausted, MalformedPolicyMessage)

    def test_start_resets_queues(self, legal_script):
        policy = ScriptedPolicy(legal_script)
        policy.act(request(1))
        policy.start("utt0001", 0)
        assert not policy.act(request(1)).is_tool_call

    def test_branch_on_observation(self):
        script = {"phase2": [{"branch": {
            "when": {"tool": "check_semantic_alignment", "path": "result.verdict", "equals": "Conflict"},
            "then": [{"tool": "replay_audio", "arguments": {"reason": "conflict", "focus_points": [0.1, 0.5]}}],
            "else": [{"output": {"final_decision": {"primary_emotions": ["Anger"]}}}],
        }}]}
        conflict = [{"tool": "check_semantic_alignment", "ok": True, "result": {"verdict": "Conflict"}}]
        assert ScriptedPolicy(script).act(request(2, conflict)).tool_name == "replay_audio"
        consistent = [{"tool": "check_semantic_alignment", "ok": True, "result": {"verdict": "Consistent"}}]
        assert not ScriptedPolicy(script).act(request(2, consistent)).is_tool_call
        assert not ScriptedPolicy(script).act(request(2)).is_tool_call

    def test_per_utterance_scripts(self):
        script = {"utterances": {"u1": [{"raw": "u1"}]}, "default": [{"raw": "default"}]}
        policy = ScriptedPolicy(script)
        policy.start("u1", 0)
        assert policy.act(request(1)).text == "u1"
        policy.start("u2", 0)
        assert policy.act(request(1)).text == "default"

    def test_unknown_action(self):
        with pytest.raises(MalformedPolicyMessage):
            ScriptedPolicy([{"say": "hi"}]).act(request(1))

    def test_from_file(self, tmp_path, legal_script):
        path = tmp_path / "script.json"
        path.write_text(json.dumps(legal_script), encoding="utf-8")
        assert ScriptedPolicy.from_file(path).act(request(2)).tool_name == PRIOR_TOOL


class TestHeuristicPolicy:
    """Tests for the rule-based policy."""

    def test_phase1_output_is_valid(self):
        policy = HeuristicPolicy()
        policy.start("utt0001", 3)
        result = validate_phase_output(1, policy.act(request(1)).text)
        assert result.ok
        assert result.violations == []
        assert len(result.parsed.candidate_pool) == 3

    def test_same_seed_same_pool(self):
        a, b = HeuristicPolicy(), HeuristicPolicy()
        a.start("u", 11)
        b.start("u", 11)
        assert a.act(request(1)).text == b.act(request(1)).text

    def test_prior_first_then_gate(self):
        policy = HeuristicPolicy()
        policy.start("u", 0)
        policy.act(request(1))
        first = policy.act(request(2))
        assert first.tool_name == PRIOR_TOOL
        assert first.arguments["anchor"] == policy.pool[0].name
        assert first.arguments["candidates"] == [e.name for e in policy.pool]
        second = policy.act(request(2))
        assert second.tool_name == SEMANTIC_GATE
        assert second.arguments == {"emotion": policy.pool[0].name}

    def test_plan_ends_with_hotspots(self):
        policy = HeuristicPolicy(explore=0.0)
        policy.start("u", 0)
        policy.act(request(1))
        names = []
        for _ in range(8):
            action = policy.act(request(2))
            if not action.is_tool_call:
                break
            names.append(action.tool_name)
        assert names[-1] == FIND_HOTSPOTS

    def test_decides_without_tools(self):
        policy = HeuristicPolicy()
        policy.start("u", 0)
        policy.act(request(1))
        action = policy.act(request(2, tools=False))
        result = validate_phase_output(2, action.text)
        assert result.ok
        assert result.parsed.primary

    def test_phase3_cites_ok_observations(self):
        policy = HeuristicPolicy()
        policy.start("u", 0)
        policy.act(request(1))
        observations = [
            {"obs_id": "obs-2", "tool": SEMANTIC_GATE, "ok": True,
             "result": {"emotion": "Anger", "evidence": [{"span": "you"}]}},
            {"obs_id": "obs-3", "tool": SEMANTIC_GATE, "ok": False, "result": None},
        ]
        text = policy.act(request(3, observations, tools=False)).text
        result = validate_phase_output(3, text, known_evidence_ids=["obs-2", "obs-3"])
        assert result.parsed.evidence_ids == ("obs-2",)


class TestRemotePolicy:
    """Tests for the chat-completion policy."""

    def test_retries_then_succeeds(self, mock_llm_client):
        sleep = Mock()
        mock_llm_client.complete.side_effect = [
            PolicyTimeout("t1"), PolicyTimeout("t2"), ChatReply(content='{"ok": 1}'),
        ]
        policy = RemotePolicy(mock_llm_client, sleep=sleep)
        action = policy.act(request(1))
        assert action.text == '{"ok": 1}'
        assert policy.retries == 2
        assert sleep.call_args_list == [call(0.5), call(1.0)]

    def test_all_timeouts(self, mock_llm_client):
        mock_llm_client.complete.side_effect = PolicyTimeout("slow")
        with pytest.raises(PolicyTimeout):
            RemotePolicy(mock_llm_client, sleep=Mock()).act(request(1))
        assert mock_llm_client.complete.call_count == 3

    def test_transport_failures_exhaust(self, mock_llm_client):
        mock_llm_client.complete.side_effect = [PolicyTimeout("t"), TransportError("down"), TransportError("down")]
        with pytest.raises(TransportError) as exc:
            RemotePolicy(mock_llm_client, sleep=Mock()).act(request(1))
        assert not exc.value.retryable

    def test_non_retryable_raises_at_once(self, mock_llm_client):
        mock_llm_client.complete.side_effect = TransportError("bad request", retryable=False)
        with pytest.raises(TransportError):
            RemotePolicy(mock_llm_client, sleep=Mock()).act(request(1))
        assert mock_llm_client.complete.call_count == 1

    def test_backoff_capped(self, mock_llm_client):
        sleep = Mock()
        mock_llm_client.complete.side_effect = PolicyTimeout("slow")
        with pytest.raises(PolicyTimeout):
            RemotePolicy(mock_llm_client, max_attempts=5, backoff=1.0, max_backoff=2.0, sleep=sleep).act(request(1))
        assert [c.args[0] for c in sleep.call_args_list] == [1.0, 2.0, 2.0, 2.0]

    def test_first_tool_call_used(self, mock_llm_client):
        mock_llm_client.complete.return_value = ChatReply(tool_calls=[
            ToolCallRequest("c1", SEMANTIC_GATE, {"emotion": "Anger"}),
            ToolCallRequest("c2", SEMANTIC_GATE, {"emotion": "Fear"}),
        ])
        action = RemotePolicy(mock_llm_client).act(request(2))
        assert action.tool_name == SEMANTIC_GATE
        assert action.call_id == "c1"

    def test_empty_reply_malformed(self, mock_llm_client):
        mock_llm_client.complete.return_value = ChatReply()
        with pytest.raises(MalformedPolicyMessage):
            RemotePolicy(mock_llm_client).act(request(2))

    def test_phase_prompt_replaces_system(self, mock_llm_client):
        RemotePolicy(mock_llm_client, phase_prompts={1: "phase one rules"}).act(request(1, tools=False))
        messages = mock_llm_client.complete.call_args[0][0]
        assert messages[0] == {"role": "system", "content": "phase one rules"}
        assert [m["role"] for m in messages] == ["system", "user"]
        assert mock_llm_client.complete.call_args[1]["tools"] is None


class TestBuildPolicyFactory:
    """Tests for policy spec parsing."""

    def test_heuristic(self):
        factory = build_policy_factory("heuristic")
        assert isinstance(factory(), HeuristicPolicy)
        assert factory() is not factory()

    def test_scripted(self, tmp_path, legal_script):
        path = tmp_path / "script.json"
        path.write_text(json.dumps(legal_script), encoding="utf-8")
        assert isinstance(build_policy_factory(f"scripted:{path}")(), ScriptedPolicy)

    def test_scripted_needs_file(self):
        with pytest.raises(ValueError, match="scripted:FILE"):
            build_policy_factory("scripted")

    def test_remote(self):
        policy = build_policy_factory("remote:http://localhost:8000/v1", api_key="k", model="m")()
        assert isinstance(policy.client, HTTPChatClient)
        assert policy.client.model == "m"

    def test_openai(self, mock_openai_client):
        policy = build_policy_factory("openai:gpt-4o-mini", api_key="k")()
        assert isinstance(policy.client, OpenAIClient)
        assert policy.client.model == "gpt-4o-mini"

    def test_unsupported(self):
        with pytest.raises(ValueError, match="Unsupported policy"):
            build_policy_factory("oracle")
