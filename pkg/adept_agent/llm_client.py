"""Chat-completion transports for the remote policy."""

import json
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional
from urllib.parse import urljoin

import requests

from .errors import MalformedPolicyMessage, PolicyTimeout, TransportError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToolCallRequest:
    id: str
    name: str
    arguments: Any


@dataclass
class ChatReply:
    content: Optional[str] = None
    tool_calls: List[ToolCallRequest] = field(default_factory=list)


def parse_arguments(raw: Any) -> Any:
    """Decode JSON-string tool arguments; undecodable text is returned unchanged."""
    if isinstance(raw, str):
        try:
            return json.loads(raw) if raw.strip() else {}
        except json.JSONDecodeError:
            return raw
    return raw


class LLMClient(ABC):
    """Abstract base class for LLM clients."""

    @abstractmethod
    def complete(self, messages: List[Dict[str, Any]], tools: Optional[List[Dict]] = None, **kwargs) -> ChatReply:
        """Send the conversation and return either text or tool calls."""

    def chat(self, messages: List[Dict[str, Any]], **kwargs) -> str:
        return self.complete(messages, **kwargs).content or ""


class OpenAIClient(LLMClient):
    """OpenAI (or OpenAI-compatible) client implementation."""

    def __init__(self, api_key: Optional[str] = None, model: str = "gpt-4o",
                 base_url: Optional[str] = None, timeout: float = 60.0):
        try:
            import openai
        except ImportError:
            raise ImportError("openai package is required. Install with: pip install openai")
        self._openai = openai
        kwargs: Dict[str, Any] = {"api_key": api_key or os.getenv("OPENAI_API_KEY"), "timeout": timeout}
        if base_url:
            kwargs["base_url"] = base_url
        self.client = openai.OpenAI(**kwargs)
        self.model = model

    def complete(self, messages, tools=None, **kwargs) -> ChatReply:
        params: Dict[str, Any] = {"model": self.model, "messages": messages, **kwargs}
        if tools:
            params["tools"] = tools
        try:
            response = self.client.chat.completions.create(**params)
        except self._openai.APITimeoutError as e:
            raise PolicyTimeout(str(e))
        except (self._openai.APIConnectionError, self._openai.RateLimitError,
                self._openai.InternalServerError) as e:
            raise TransportError(str(e), retryable=True)
        except self._openai.APIError as e:
            raise TransportError(str(e), retryable=False)

        message = response.choices[0].message
        calls = [
            ToolCallRequest(tc.id, tc.function.name, parse_arguments(tc.function.arguments))
            for tc in (message.tool_calls or [])
        ]
        return ChatReply(content=message.content, tool_calls=calls)


def _to_anthropic(messages: List[Dict[str, Any]]):
    """Split the system prompt and convert OpenAI-style tool turns into content blocks."""
    system = "\n\n".join(m["content"] for m in messages if m["role"] == "system")
    converted: List[Dict[str, Any]] = []
    for m in messages:
        if m["role"] == "system":
            continue
        if m["role"] == "tool":
            block = {"type": "tool_result", "tool_use_id": m["tool_call_id"], "content": m["content"]}
            if converted and converted[-1]["role"] == "user" and isinstance(converted[-1]["content"], list):
                converted[-1]["content"].append(block)
            else:
                converted.append({"role": "user", "content": [block]})
        elif m["role"] == "assistant" and m.get("tool_calls"):
            blocks: List[Dict[str, Any]] = []
            if m.get("content"):
                blocks.append({"type": "text", "text": m["content"]})
            for tc in m["tool_calls"]:
                blocks.append({
                    "type": "tool_use",
                    "id": tc["id"],
                    "name": tc["function"]["name"],
                    "input": parse_arguments(tc["function"]["arguments"]),
                })
            converted.append({"role": "assistant", "content": blocks})
        else:
            converted.append({"role": m["role"], "content": m["content"]})
    return system, converted


class AnthropicClient(LLMClient):
    """Anthropic Claude client implementation."""

    def __init__(self, api_key: Optional[str] = None, model: str = "claude-3-5-sonnet-latest",
                 max_tokens: int = 2048, timeout: float = 60.0):
        try:
            import anthropic
        except ImportError:
            raise ImportError("anthropic package is required. Install with: pip install anthropic")
        self._anthropic = anthropic
        self.client = anthropic.Anthropic(api_key=api_key or os.getenv("ANTHROPIC_API_KEY"), timeout=timeout)
        self.model = model
        self.max_tokens = max_tokens

    def complete(self, messages, tools=None, **kwargs) -> ChatReply:
        system, converted = _to_anthropic(messages)
        params: Dict[str, Any] = {
            "model": self.model,
            "max_tokens": self.max_tokens,
            "messages": converted,
            **kwargs,
        }
        if system:
            params["system"] = system
        if tools:
            params["tools"] = [
                {
                    "name": t["function"]["name"],
                    "description": t["function"]["description"],
                    "input_schema": t["function"]["parameters"],
                }
                for t in tools
            ]
        try:
            response = self.client.messages.create(**params)
        except self._anthropic.APITimeoutError as e:
            raise PolicyTimeout(str(e))
        except (self._anthropic.APIConnectionError, self._anthropic.RateLimitError,
                self._anthropic.InternalServerError) as e:
            raise TransportError(str(e), retryable=True)
        except self._anthropic.APIError as e:
            raise TransportError(str(e), retryable=False)

        text = "".join(b.text for b in response.content if b.type == "text") or None
        calls = [
            ToolCallRequest(b.id, b.name, b.input) for b in response.content if b.type == "tool_use"
        ]
        return ChatReply(content=text, tool_calls=calls)


class HTTPChatClient(LLMClient):
    """Plain chat-completions endpoint over a requests session."""

    def __init__(self, base_url: str, api_key: Optional[str] = None, model: str = "default",
                 timeout: float = 60.0):
        """
        Initialize the HTTP client.

        Args:
            base_url: Endpoint root (e.g., 'http://localhost:8000/v1')
            api_key: Bearer token, if the endpoint needs one
            model: Model name sent with each request
            timeout: Per-request timeout in seconds
        """
        self.base_url = base_url.rstrip("/") + "/"
        self.model = model
        self.timeout = timeout
        self.session = requests.Session()
        self.session.headers.update({"Content-Type": "application/json"})
        if api_key:
            self.session.headers.update({"Authorization": f"Bearer {api_key}"})

    def _request(self, method: str, endpoint: str, **kwargs) -> requests.Response:
        url = urljoin(self.base_url, endpoint.lstrip("/"))
        try:
            response = self.session.request(method, url, timeout=self.timeout, **kwargs)
            response.raise_for_status()
        except requests.Timeout as e:
            raise PolicyTimeout(str(e))
        except requests.ConnectionError as e:
            raise TransportError(str(e), retryable=True)
        except requests.HTTPError as e:
            status = e.response.status_code if e.response is not None else 0
            raise TransportError(str(e), retryable=status == 429 or status >= 500)
        return response

    def complete(self, messages, tools=None, **kwargs) -> ChatReply:
        payload: Dict[str, Any] = {"model": self.model, "messages": messages, **kwargs}
        if tools:
            payload["tools"] = tools
        response = self._request("POST", "chat/completions", json=payload)
        try:
            message = response.json()["choices"][0]["message"]
            calls = [
                ToolCallRequest(
                    tc.get("id", f"call_{i}"),
                    tc["function"]["name"],
                    parse_arguments(tc["function"].get("arguments", "")),
                )
                for i, tc in enumerate(message.get("tool_calls") or [])
            ]
            content = message.get("content")
        except (ValueError, KeyError, IndexError, TypeError, AttributeError) as e:
            raise MalformedPolicyMessage(f"unexpected chat-completion body: {e!r}")
        return ChatReply(content=content, tool_calls=calls)


def get_llm_client(provider: str = "http", **kwargs) -> LLMClient:
    """Factory function to get an LLM client."""
    provider = provider.lower()

    if provider == "openai":
        return OpenAIClient(**kwargs)
    elif provider == "anthropic":
        return AnthropicClient(**kwargs)
    elif provider == "http":
        return HTTPChatClient(**kwargs)
    else:
        raise ValueError(f"Unsupported LLM provider: {provider}. Supported: openai, anthropic, http")
