"""Chat-completions-style remote backend.

Speaks the common self-hosted serving wire format: POST {base_url}/chat/completions
with a model name, a message list and temperature 0, bearer-token auth, and an
optional JSON response-format directive. Transport errors (connect failures,
timeouts, 408/429/5xx) are retried with exponential backoff up to the
configured cap; anything the model says that fails to parse is NOT retried —
parse failures are recorded, not re-rolled.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import httpx

from ..context import InferenceRequest, render_request_input, request_fingerprint
from ..model import IntentTaxonomy
from .base import AnnotatorBackend, BackendCapabilities, BackendUnavailable, RawModelOutput

RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatEndpointConfig:
    backend_id: str
    base_url: str
    model: str
    api_key: Optional[str] = None
    api_key_env: Optional[str] = None
    timeout_ms: int = 30_000
    max_retries: int = 3
    max_in_flight: int = 4
    backoff_base_s: float = 0.5
    structured_response: bool = True
    temperature: float = 0.0

    def resolve_api_key(self) -> Optional[str]:
        if self.api_key_env:
            from_env = os.environ.get(self.api_key_env)
            if from_env:
                return from_env
        return self.api_key

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChatEndpointConfig":
        return cls(
            backend_id=data["backend_id"],
            base_url=data["base_url"].rstrip("/"),
            model=data["model"],
            api_key=data.get("api_key"),
            api_key_env=data.get("api_key_env"),
            timeout_ms=int(data.get("timeout_ms", 30_000)),
            max_retries=int(data.get("max_retries", 3)),
            max_in_flight=int(data.get("max_in_flight", 4)),
            backoff_base_s=float(data.get("backoff_base_s", 0.5)),
            structured_response=bool(data.get("structured_response", True)),
            temperature=float(data.get("temperature", 0.0)),
        )


def load_endpoint_config(source: Union[str, Path, Mapping]) -> ChatEndpointConfig:
    if isinstance(source, Mapping):
        return ChatEndpointConfig.from_dict(source)
    with open(source, "r", encoding="utf-8") as fh:
        return ChatEndpointConfig.from_dict(json.load(fh))


class ChatCompletionsBackend(AnnotatorBackend):
    def __init__(
        self,
        config: ChatEndpointConfig,
        taxonomy: Optional[IntentTaxonomy] = None,
        audit_sink=None,
        sleep: Callable[[float], None] = time.sleep,
        client: Optional[httpx.Client] = None,
    ) -> None:
        super().__init__(
            config.backend_id,
            BackendCapabilities(supports_batching=True, deterministic=False),
            taxonomy,
            audit_sink,
        )
        self.config = config
        self._sleep = sleep
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._client = client or httpx.Client(timeout=config.timeout_ms / 1000.0)

    def close(self) -> None:
        self._client.close()

    def _build_payload(self, request: InferenceRequest) -> dict:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.instruction},
                {"role": "user", "content": render_request_input(request)},
            ],
        }
        if self.config.structured_response:
            payload["response_format"] = {"type": "json_object"}
        return payload

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = self.config.resolve_api_key()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def complete(self, request: InferenceRequest) -> RawModelOutput:
        fingerprint = request_fingerprint(request)
        url = f"{self.config.base_url}/chat/completions"
        payload = self._build_payload(request)
        headers = self._headers()
        started = time.monotonic()
        last_error: Optional[str] = None
        retries = 0
        with self._semaphore:
            for attempt in range(self.config.max_retries + 1):
                if attempt > 0:
                    self._sleep(self.config.backoff_base_s * (2 ** (attempt - 1)))
                    retries += 1
                try:
                    response = self._client.post(url, json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    last_error = f"transport error: {exc}"
                    continue
                if response.status_code in RETRYABLE_STATUS:
                    last_error = f"HTTP {response.status_code}"
                    continue
                if response.status_code in (401, 403):
                    raise BackendUnavailable(
                        f"{self.identity}: authentication failed (HTTP {response.status_code})"
                    )
                if response.status_code != 200:
                    raise BackendUnavailable(
                        f"{self.identity}: unexpected HTTP {response.status_code}"
                    )
                text = _extract_message_text(response, self.identity)
                latency_ms = int((time.monotonic() - started) * 1000)
                return RawModelOutput(
                    text=text,
                    latency_ms=latency_ms,
                    backend=self.identity,
                    request_fingerprint=fingerprint,
                    retries=retries,
                )
        raise BackendUnavailable(
            f"{self.identity}: retries exhausted after {self.config.max_retries + 1} attempts ({last_error})"
        )


def _extract_message_text(response: httpx.Response, identity: str) -> str:
    try:
        body = response.json()
        return body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendUnavailable(f"{identity}: malformed response envelope ({exc})") from exc
