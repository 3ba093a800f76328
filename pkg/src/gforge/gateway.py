"""Chat-completion access: a live HTTP backend plus record/replay cassettes.

All network I/O in the project goes through this module. A cassette is an
append-only JSONL file of prompt/response exchanges keyed by a digest of
(prompt, model, params); replay mode resolves completions from the
cassette alone and never touches the network, which makes whole pipeline
runs bit-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import httpx

API_KEY_ENV = "GFORGE_API_KEY"

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class GatewayError(Exception):
    """Base class for backend failures."""


class ConfigError(GatewayError):
    """The backend configuration is incomplete for its kind."""


class AuthError(GatewayError):
    """The endpoint rejected the credential."""


class RateLimited(GatewayError):
    """Rate limiting persisted after all retries."""


class Timeout(GatewayError):
    """The request timed out after all retries."""


class CassetteMiss(GatewayError):
    """Replay mode found no exchange for the prompt digest."""


@dataclass(frozen=True)
class Exchange:
    """One recorded prompt/response pair."""

    prompt_digest: str
    prompt: str
    response: str
    model: str
    timestamp: str
    usage: dict | None = None

    def to_dict(self) -> dict:
        return {
            "prompt_digest": self.prompt_digest,
            "prompt": self.prompt,
            "response": self.response,
            "model": self.model,
            "timestamp": self.timestamp,
            "usage": self.usage,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Exchange":
        return cls(
            prompt_digest=data["prompt_digest"],
            prompt=data.get("prompt", ""),
            response=data["response"],
            model=data.get("model", ""),
            timestamp=data.get("timestamp", ""),
            usage=data.get("usage"),
        )


def prompt_digest(prompt: str, model: str, params: dict) -> str:
    """Pure digest of everything that determines a completion request."""
    blob = json.dumps(
        {"prompt": prompt, "model": model, "params": params},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "live" | "replay" | "record"
    model: str = "gpt-4o"
    endpoint: str | None = None
    temperature: float = 0.0
    max_retries: int = 4
    timeout: float = 60.0
    cassette_path: str | None = None
    max_concurrency: int = 4
    retry_base_delay: float = 1.0

    def validate(self) -> None:
        if self.kind not in ("live", "replay", "record"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind in ("replay", "record") and not self.cassette_path:
            raise ConfigError(f"{self.kind} mode requires cassette_path")
        if self.kind in ("live", "record"):
            if not self.endpoint:
                raise ConfigError(f"{self.kind} mode requires an endpoint URL")
            if not os.environ.get(API_KEY_ENV):
                raise ConfigError(
                    f"{self.kind} mode requires the {API_KEY_ENV} environment variable"
                )
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")

    @property
    def params(self) -> dict:
        return {"temperature": self.temperature}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model,
            "endpoint": self.endpoint,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
            "cassette_path": self.cassette_path,
            "max_concurrency": self.max_concurrency,
            "retry_base_delay": self.retry_base_delay,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        return cls(**data)


def load_cassette(path: str | Path) -> dict[str, str]:
    """Digest -> response map; the last record wins for repeated digests."""
    responses: dict[str, str] = {}
    cassette = Path(path)
    if not cassette.exists():
        return responses
    for line in cassette.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        responses[record["prompt_digest"]] = record["response"]
    return responses


def read_cassette(path: str | Path) -> list[Exchange]:
    exchanges = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            exchanges.append(Exchange.from_dict(json.loads(line)))
    return exchanges


class Gateway:
    """Thread-safe completion client for one configured backend."""

    def __init__(self, config: BackendConfig):
        config.validate()
        self.config = config
        self._append_lock = threading.Lock()
        self._semaphore = threading.BoundedSemaphore(config.max_concurrency)
        self._responses: dict[str, str] | None = None

    def _cassette(self) -> dict[str, str]:
        if self._responses is None:
            self._responses = load_cassette(self.config.cassette_path)
        return self._responses

    def complete(self, prompt: str) -> str:
        digest = prompt_digest(prompt, self.config.model, self.config.params)
        if self.config.kind == "replay":
            responses = self._cassette()
            if digest not in responses:
                raise CassetteMiss(
                    f"no recorded exchange for digest {digest} in "
                    f"{self.config.cassette_path}"
                )
            return responses[digest]

        with self._semaphore:
            response, usage = self._http_complete(prompt)
        if self.config.kind == "record":
            exchange = Exchange(
                prompt_digest=digest,
                prompt=prompt,
                response=response,
                model=self.config.model,
                timestamp=datetime.now(timezone.utc).isoformat(),
                usage=usage,
            )
            with self._append_lock:
                with open(self.config.cassette_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(exchange.to_dict(), sort_keys=True) + "\n")
        return response

    def _http_complete(self, prompt: str) -> tuple[str, dict | None]:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Authorization": f"Bearer {os.environ.get(API_KEY_ENV, '')}"}
        last_error: GatewayError | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                response = httpx.post(
                    self.config.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout,
                )
            except httpx.TimeoutException as exc:
                last_error = Timeout(f"request timed out: {exc}")
            except httpx.HTTPError as exc:
                last_error = GatewayError(f"transport failure: {exc}")
            else:
                if response.status_code == 200:
                    body = response.json()
                    content = body["choices"][0]["message"]["content"]
                    return content, body.get("usage")
                if response.status_code in (401, 403):
                    raise AuthError(
                        f"endpoint rejected credentials (HTTP {response.status_code})"
                    )
                if response.status_code not in _RETRYABLE_STATUS:
                    raise GatewayError(
                        f"HTTP {response.status_code}: {response.text[:200]}"
                    )
                if response.status_code == 429:
                    last_error = RateLimited(f"HTTP 429: {response.text[:200]}")
                else:
                    last_error = GatewayError(
                        f"HTTP {response.status_code}: {response.text[:200]}"
                    )
            if attempt < self.config.max_retries:
                base = min(self.config.retry_base_delay * (2 ** attempt), 30.0)
                time.sleep(base * random.uniform(0.5, 1.0))
        assert last_error is not None
        raise last_error


def complete(prompt: str, config: BackendConfig) -> str:
    """One-shot completion; prefer a Gateway instance for repeated calls."""
    return Gateway(config).complete(prompt)
