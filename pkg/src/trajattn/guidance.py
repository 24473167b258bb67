"""Foreground/background prompt splitting and the union text condition.

Splitting goes through a :class:`SplitterClient`. The default
:class:`StubSplitter` is a pure function of the prompt so everything runs
offline; :class:`RemoteSplitter` sends the instruction template to an
OpenAI-style chat endpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .attention import ConditionEmbedding
from .errors import ClientUnavailable, MalformedResponse, TrajAttnError, WidthMismatch
from .masking import ConditionLayout

log = logging.getLogger(__name__)

WORD_RANGE = (80, 100)


def instruction_template() -> str:
    return (Path(__file__).parent / "data" / "splitter_instruction.txt").read_text()


@dataclass(frozen=True)
class PromptBundle:
    original: str
    foreground: str
    background: str


class SplitterClient(Protocol):
    def split(self, prompt: str) -> PromptBundle: ...


_LOCATIVE = (
    "in", "on", "across", "through", "over", "above", "under", "below", "along", "at",
    "into", "onto", "near", "around", "inside", "beside", "between", "towards", "toward",
    "from", "up", "down", "within", "beneath", "past",
)
_LOCATIVE_RE = re.compile(r"\b(" + "|".join(_LOCATIVE) + r")\b", re.IGNORECASE)


class StubSplitter:
    """Deterministic splitter: subject clause vs. everything after the first locative word.

    ``"A panda walking in a bamboo forest"`` becomes foreground
    ``"A panda walking, close-up shot, ..."`` and background
    ``"a bamboo forest, ..."``.
    """

    fg_suffix = "close-up shot, the subject fills the entire frame"
    scene_phrase = "empty scene without any main subject, natural lighting"

    def split(self, prompt: str) -> PromptBundle:
        text = " ".join(prompt.split())
        m = _LOCATIVE_RE.search(text)
        subject, rest = text, ""
        if m and text[:m.start()].strip(" ,."):
            subject = text[:m.start()]
            rest = text[m.end():]
        subject = subject.strip(" ,.")
        rest = rest.strip(" ,.")
        fg = f"{subject}, {self.fg_suffix}"
        bg = f"{rest}, {self.scene_phrase}" if rest else self.scene_phrase
        return PromptBundle(prompt, fg, bg)


_FIELD_RE = re.compile(
    r"foreground_prompt:\s*(?P<fg>.*?)\s*background_prompt:\s*(?P<bg>.*)\s*$", re.DOTALL
)
_FIELD_RE_REVERSED = re.compile(
    r"background_prompt:\s*(?P<bg>.*?)\s*foreground_prompt:\s*(?P<fg>.*)\s*$", re.DOTALL
)


def parse_split_response(text: str, original: str = "") -> PromptBundle:
    m = _FIELD_RE.search(text) or _FIELD_RE_REVERSED.search(text)
    if m is None:
        missing = [k for k in ("foreground_prompt:", "background_prompt:") if k not in text]
        raise MalformedResponse(f"response missing {', '.join(missing) or 'parsable fields'}")
    fg, bg = m.group("fg").strip(), m.group("bg").strip()
    if not fg or not bg:
        raise MalformedResponse("response has an empty foreground or background prompt")
    lo, hi = WORD_RANGE
    for name, value in (("foreground", fg), ("background", bg)):
        n = len(value.split())
        if not lo <= n <= hi:
            log.warning("%s prompt has %d words, outside %d-%d; accepted", name, n, lo, hi)
    return PromptBundle(original, fg, bg)


class RemoteSplitter:
    """Chat-completions client for a language-model prompt splitter.

    The endpoint receives the instruction template followed by the user
    prompt as one user message. A JSON body with ``choices[0].message.content``
    is accepted, as is a plain-text body.
    """

    def __init__(self, endpoint: str, model: str, timeout: float = 60.0,
                 api_key_env: str | None = "SPLITTER_API_KEY"):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.api_key_env = api_key_env

    def build_instruction(self, prompt: str) -> str:
        return f"{instruction_template().rstrip()}\n{prompt}"

    def _request(self, prompt: str) -> urllib.request.Request:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": self.build_instruction(prompt)}],
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return urllib.request.Request(
            self.endpoint, data=json.dumps(body).encode(), headers=headers, method="POST"
        )

    def split(self, prompt: str) -> PromptBundle:
        try:
            with urllib.request.urlopen(self._request(prompt), timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8", errors="replace")
        except (urllib.error.URLError, OSError) as exc:
            raise ClientUnavailable(f"splitter endpoint {self.endpoint} unreachable: {exc}") from None
        try:
            payload = json.loads(raw)
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            text = raw
        return parse_split_response(text, prompt)


def split_prompt(prompt: str, client: SplitterClient | None = None) -> PromptBundle:
    if not prompt or not prompt.strip():
        raise TrajAttnError("prompt must be non-empty")
    return (client or StubSplitter()).split(prompt)


_TOKEN_RE = re.compile(r"[a-z0-9]+(?:['-][a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little")).standard_normal(dim)


def encode_text(text: str, dim: int, seed: int = 0, max_tokens: int = 64, dtype=np.float64) -> np.ndarray:
    """Hash each word to a seeded standard-normal vector; ``(n_tokens, dim)``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    words = tokenize(text)[:max_tokens]
    out = np.zeros((len(words), dim), dtype=dtype)
    for i, w in enumerate(words):
        out[i] = _token_vector(w, dim, seed)
    return out


def union_condition(fg_keys: np.ndarray, bg_keys: np.ndarray) -> ConditionEmbedding:
    if fg_keys.shape[1:] != bg_keys.shape[1:]:
        raise WidthMismatch(f"foreground width {fg_keys.shape[1:]} != background width {bg_keys.shape[1:]}")
    n_fg, n_bg = len(fg_keys), len(bg_keys)
    layout = ConditionLayout((0, n_fg), (n_fg, n_fg + n_bg))
    return ConditionEmbedding(np.concatenate([fg_keys, bg_keys]), layout)
