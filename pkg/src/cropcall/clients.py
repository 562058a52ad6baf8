"""Model clients: chat-completions over HTTP and a scripted mock backend.

Requests are built as logical messages whose image parts carry an opaque
image reference plus the resolution to render (``"low"`` or ``"full"``).
The HTTP client turns those into base64 data URIs; the mock backend keys its
canned replies on a fingerprint of the logical request, so fixtures never
depend on pixel data.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import mimetypes
import threading
import time
from pathlib import Path
from typing import Callable, Protocol

import httpx

API_KEY_ENV = "CROPCALL_API_KEY"


class ClientError(RuntimeError):
    """A model call failed (after retries, where applicable)."""


class ChatModel(Protocol):
    model: str

    def complete(self, messages: list[dict]) -> str: ...


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(ref: str, resolution: str = "full") -> dict:
    return {"type": "image", "image": ref, "resolution": resolution}


def fingerprint(model: str, messages: list[dict]) -> str:
    blob = json.dumps({"model": model, "messages": messages}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:24]


def load_image_data_uri(ref: str, resolution: str = "full") -> str:
    """Read an image file and return it as a data URI, halving each side for ``low``."""
    path = Path(ref)
    if resolution == "low":
        from PIL import Image

        with Image.open(path) as im:
            w, h = im.size
            small = im.resize((-(-w // 2), -(-h // 2)))
            buf = io.BytesIO()
            small.save(buf, format="PNG")
        data, mime = buf.getvalue(), "image/png"
    else:
        data = path.read_bytes()
        mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64," + base64.b64encode(data).decode("ascii")


class HttpChatClient:
    """POSTs ``{model, messages, temperature}`` to a chat-completions endpoint.

    Retries up to ``retries`` attempts with exponential backoff.
    """

    def __init__(self, url: str, model: str, api_key: str | None = None,
                 temperature: float = 0.0, timeout: float = 120.0, retries: int = 3,
                 backoff: float = 1.0,
                 image_loader: Callable[[str, str], str] = load_image_data_uri,
                 http: httpx.Client | None = None):
        self.url = url
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self.image_loader = image_loader
        self.headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._http = http or httpx.Client(timeout=timeout)

    def _wire_messages(self, messages: list[dict]) -> list[dict]:
        out = []
        for m in messages:
            content = m["content"]
            if isinstance(content, list):
                parts = []
                for p in content:
                    if p.get("type") == "image":
                        parts.append({"type": "image",
                                      "image": self.image_loader(p["image"], p.get("resolution", "full"))})
                    else:
                        parts.append(p)
                content = parts
            out.append({"role": m["role"], "content": content})
        return out

    def complete(self, messages: list[dict]) -> str:
        try:
            body = {"model": self.model, "messages": self._wire_messages(messages),
                    "temperature": self.temperature}
        except Exception as e:
            raise ClientError(f"could not build request: {e}") from e
        last = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(self.url, json=body, headers=self.headers)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as e:
                last = e
        raise ClientError(f"{self.model}: request failed after {self.retries} attempts: {last}")


class MockChatClient:
    """Replays canned replies keyed by request fingerprint."""

    def __init__(self, model: str, replies: dict[str, str]):
        self.model = model
        self.replies = replies

    @classmethod
    def from_file(cls, model: str, path: str | Path) -> "MockChatClient":
        return cls(model, load_fixtures(path))

    def complete(self, messages: list[dict]) -> str:
        fp = fingerprint(self.model, messages)
        try:
            return self.replies[fp]
        except KeyError:
            raise ClientError(f"{self.model}: no scripted reply for request {fp}") from None


class ScriptedChatClient:
    """Computes replies with a Python callable; handy for tests and for building fixtures."""

    def __init__(self, model: str, fn: Callable[[list[dict]], str]):
        self.model = model
        self.fn = fn

    def complete(self, messages: list[dict]) -> str:
        return self.fn(messages)


class RecordingClient:
    """Wraps a client and records ``fingerprint -> reply`` for every call."""

    def __init__(self, inner):
        self.inner = inner
        self.model = inner.model
        self.recorded: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, messages: list[dict]) -> str:
        reply = self.inner.complete(messages)
        with self._lock:
            self.recorded[fingerprint(self.model, messages)] = reply
        return reply


def load_fixtures(path: str | Path) -> dict[str, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return dict(doc.get("replies", doc))


def save_fixtures(path: str | Path, replies: dict[str, str]) -> None:
    Path(path).write_text(json.dumps({"replies": dict(sorted(replies.items()))}, indent=1,
                                     ensure_ascii=False) + "\n", encoding="utf-8")
