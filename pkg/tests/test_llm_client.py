"""Tests for LLM client transports."""

import json
from unittest.mock import MagicMock, Mock, patch

import pytest
import requests

from adept_agent.errors import MalformedPolicyMessage, PolicyTimeout, TransportError
from adept_agent.llm_client import (
    AnthropicClient,
    HTTPChatClient,
    OpenAIClient,
    _to_anthropic,
    get_llm_client,
    parse_arguments,
)

MESSAGES = [
    {"role": "system", "content": "You are a careful annotator."},
    {"role": "user", "content": "transcript: you lied"},
]
TOOLS = [{
    "type": "function",
    "function": {"name": "run_semantic_gate", "description": "cues", "parameters": {"type": "object"}},
}]


def http_response(status=200, body=None):
    response = Mock()
    response.status_code = status
    response.json.return_value = body
    if status >= 400:
        response.raise_for_status.side_effect = requests.HTTPError(f"{status} error", response=response)
    else:
        response.raise_for_status.return_value = None
    return response


class TestParseArguments:
    """Tests for tool argument decoding."""

    def test_json_string(self):
        assert parse_arguments('{"emotion": "Anger"}') == {"emotion": "Anger"}

    def test_blank_string(self):
        assert parse_arguments("  ") == {}

    def test_undecodable_kept(self):
        assert parse_arguments("emotion=Anger") == "emotion=Anger"

    def test_dict_passthrough(self):
        assert parse_arguments({"a": 1}) == {"a": 1}


class TestOpenAIClient:
    """Tests for OpenAI client."""

    def test_openai_client_init(self, mock_openai_client):
        """Test OpenAI client initialization."""
        client = OpenAIClient(api_key="test-key", model="gpt-4o-mini")
        assert client.model == "gpt-4o-mini"

    def test_openai_client_init_without_key(self, monkeypatch):
        """Test OpenAI client initialization with env var."""
        monkeypatch.setenv("OPENAI_API_KEY", "env-key")
        with patch("openai.OpenAI") as mock_openai_class:
            mock_openai_class.return_value = MagicMock()
            OpenAIClient(base_url="http://localhost:8000/v1")
            mock_openai_class.assert_called_once_with(
                api_key="env-key", timeout=60.0, base_url="http://localhost:8000/v1"
            )

    def test_openai_client_text_reply(self, mock_openai_client):
        """Test a plain text completion."""
        client = OpenAIClient(api_key="test-key")
        reply = client.complete(MESSAGES, TOOLS)

        assert reply.content == "Test response"
        assert reply.tool_calls == []
        call_args = mock_openai_client.chat.completions.create.call_args
        assert call_args[1]["model"] == "gpt-4o"
        assert call_args[1]["messages"] == MESSAGES
        assert call_args[1]["tools"] == TOOLS

    def test_openai_client_tool_call(self, mock_openai_client):
        """Test tool call decoding."""
        tc = MagicMock()
        tc.id = "call_1"
        tc.function.name = "run_semantic_gate"
        tc.function.arguments = json.dumps({"emotion": "Anger"})
        message = MagicMock(content=None, tool_calls=[tc])
        mock_openai_client.chat.completions.create.return_value = MagicMock(choices=[MagicMock(message=message)])

        reply = OpenAIClient(api_key="test-key").complete(MESSAGES, TOOLS)

        assert reply.content is None
        assert reply.tool_calls[0].name == "run_semantic_gate"
        assert reply.tool_calls[0].arguments == {"emotion": "Anger"}

    def test_openai_client_chat(self, mock_openai_client):
        """Test the text-only chat helper."""
        assert OpenAIClient(api_key="test-key").chat(MESSAGES) == "Test response"

    def test_openai_timeout_mapped(self, mock_openai_client):
        """Test SDK timeouts become PolicyTimeout."""
        import openai

        mock_openai_client.chat.completions.create.side_effect = openai.APITimeoutError(request=MagicMock())
        with pytest.raises(PolicyTimeout):
            OpenAIClient(api_key="test-key").complete(MESSAGES)

    def test_openai_client_missing_package(self, monkeypatch):
        """Test error when openai package is missing."""
        with patch.dict("sys.modules", {"openai": None}):
            with pytest.raises(ImportError, match="openai package is required"):
                OpenAIClient()


class TestAnthropicClient:
    """Tests for Anthropic client."""

    def test_anthropic_client_init(self, mock_anthropic_client):
        """Test Anthropic client initialization."""
        client = AnthropicClient(api_key="test-key", model="claude-3-5-haiku-latest")
        assert client.model == "claude-3-5-haiku-latest"

    def test_anthropic_client_request_shape(self, mock_anthropic_client):
        """Test system prompt and tool conversion."""
        reply = AnthropicClient(api_key="test-key").complete(MESSAGES, TOOLS)

        assert reply.content == "Test response"
        call_args = mock_anthropic_client.messages.create.call_args[1]
        assert call_args["system"] == "You are a careful annotator."
        assert call_args["messages"] == [{"role": "user", "content": "transcript: you lied"}]
        assert call_args["tools"][0]["name"] == "run_semantic_gate"
        assert call_args["tools"][0]["input_schema"] == {"type": "object"}

    def test_anthropic_tool_use_block(self, mock_anthropic_client):
        """Test tool_use blocks become tool calls."""
        block = MagicMock()
        block.type = "tool_use"
        block.id = "toolu_1"
        block.name = "run_semantic_gate"
        block.input = {"emotion": "Fear"}
        mock_anthropic_client.messages.create.return_value = MagicMock(content=[block])

        reply = AnthropicClient(api_key="test-key").complete(MESSAGES, TOOLS)

        assert reply.content is None
        assert reply.tool_calls[0].arguments == {"emotion": "Fear"}

    def test_anthropic_client_missing_package(self, monkeypatch):
        """Test error when anthropic package is missing."""
        with patch.dict("sys.modules", {"anthropic": None}):
            with pytest.raises(ImportError, match="anthropic package is required"):
                AnthropicClient()

    def test_tool_turns_converted(self):
        """Test OpenAI-style tool turns map onto content blocks."""
        messages = MESSAGES + [
            {"role": "assistant", "content": None, "tool_calls": [
                {"id": "c1", "type": "function",
                 "function": {"name": "run_semantic_gate", "arguments": '{"emotion": "Anger"}'}},
            ]},
            {"role": "tool", "tool_call_id": "c1", "content": '{"ok": true}'},
        ]
        system, converted = _to_anthropic(messages)
        assert system == "You are a careful annotator."
        assert converted[1]["content"][0] == {
            "type": "tool_use", "id": "c1", "name": "run_semantic_gate", "input": {"emotion": "Anger"},
        }
        assert converted[2]["content"][0]["type"] == "tool_result"
        assert converted[2]["content"][0]["tool_use_id"] == "c1"


class TestHTTPChatClient:
    """Tests for the plain HTTP transport."""

    def test_headers_and_payload(self):
        client = HTTPChatClient("http://localhost:8000/v1", api_key="secret", model="policy-7b")
        body = {"choices": [{"message": {"content": "{}", "tool_calls": [
            {"id": "c9", "function": {"name": "replay_audio", "arguments": '{"reason": "x"}'}},
        ]}}]}
        with patch.object(client.session, "request", return_value=http_response(body=body)) as request:
            reply = client.complete(MESSAGES, TOOLS)

        assert client.session.headers["Authorization"] == "Bearer secret"
        method, url = request.call_args[0]
        assert (method, url) == ("POST", "http://localhost:8000/v1/chat/completions")
        assert request.call_args[1]["json"]["model"] == "policy-7b"
        assert request.call_args[1]["json"]["tools"] == TOOLS
        assert reply.tool_calls[0].id == "c9"
        assert reply.tool_calls[0].arguments == {"reason": "x"}

    def test_timeout(self):
        client = HTTPChatClient("http://localhost:8000/v1")
        with patch.object(client.session, "request", side_effect=requests.Timeout("slow")):
            with pytest.raises(PolicyTimeout):
                client.complete(MESSAGES)

    def test_connection_error_retryable(self):
        client = HTTPChatClient("http://localhost:8000/v1")
        with patch.object(client.session, "request", side_effect=requests.ConnectionError("refused")):
            with pytest.raises(TransportError) as exc:
                client.complete(MESSAGES)
        assert exc.value.retryable

    @pytest.mark.parametrize("status,retryable", [(503, True), (429, True), (400, False)])
    def test_http_errors(self, status, retryable):
        client = HTTPChatClient("http://localhost:8000/v1")
        with patch.object(client.session, "request", return_value=http_response(status)):
            with pytest.raises(TransportError) as exc:
                client.complete(MESSAGES)
        assert exc.value.retryable is retryable

    def test_malformed_body(self):
        client = HTTPChatClient("http://localhost:8000/v1")
        with patch.object(client.session, "request", return_value=http_response(body={"choices": []})):
            with pytest.raises(MalformedPolicyMessage):
                client.complete(MESSAGES)

    @pytest.mark.parametrize("tool_call", [{"id": "x"}, {"id": "x", "function": None}, "replay_audio"])
    def test_malformed_tool_call(self, tool_call):
        client = HTTPChatClient("http://localhost:8000/v1")
        body = {"choices": [{"message": {"content": None, "tool_calls": [tool_call]}}]}
        with patch.object(client.session, "request", return_value=http_response(body=body)):
            with pytest.raises(MalformedPolicyMessage):
                client.complete(MESSAGES)


class TestGetLLMClient:
    """Tests for LLM client factory."""

    def test_get_openai_client(self, mock_openai_client):
        """Test getting OpenAI client."""
        assert isinstance(get_llm_client("openai", api_key="test-key"), OpenAIClient)

    def test_get_anthropic_client(self, mock_anthropic_client):
        """Test getting Anthropic client."""
        assert isinstance(get_llm_client("Anthropic", api_key="test-key"), AnthropicClient)

    def test_get_http_client(self):
        """Test getting the HTTP client."""
        client = get_llm_client(base_url="http://localhost:8000/v1")
        assert isinstance(client, HTTPChatClient)
        assert client.base_url == "http://localhost:8000/v1/"

    def test_get_unsupported_client(self):
        """Test error for unsupported provider."""
        with pytest.raises(ValueError, match="Unsupported LLM provider"):
            get_llm_client("unsupported")
