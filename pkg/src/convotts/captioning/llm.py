"""LLM transport layer: abstract client, deterministic mock, HTTP client.

Prompts are versioned text templates (see the prompts/ package data). Every
template starts with a ``TASK: <name>`` sentinel line; the mock client routes
on it and parses the same structured blocks a live model would see, so the
prompt text is the single source of truth for what the model is asked.
"""

from __future__ import annotations

import abc
import hashlib
import os
import re
import time
from dataclasses import dataclass
from importlib import resources

from ..corpus import EMOTIONS
from . import phrases


class LLMTransportError(RuntimeError):
    """Raised when the underlying transport keeps failing after retries."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_seconds: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def load_prompt_template(name: str) -> str:
    ref = resources.files("convotts.captioning").joinpath(f"prompts/{name}.txt")
    return ref.read_text(encoding="utf-8")


class LLMClient(abc.ABC):
    """Minimal completion interface: one prompt in, one text out."""

    @abc.abstractmethod
    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class ScriptedLLMClient(LLMClient):
    """Returns canned responses in order; raises when the script runs dry."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self._responses:
            raise LLMTransportError("scripted client has no responses left")
        return self._responses.pop(0)


def _parse_block(prompt: str, key: str) -> str:
    m = re.search(rf"^{re.escape(key)}:\s*(.*)$", prompt, flags=re.MULTILINE)
    if m is None:
        raise ValueError(f"prompt is missing a {key!r} line")
    return m.group(1).strip()


def _parse_attributes(prompt: str) -> dict[str, str]:
    return {
        k: _parse_block(prompt, k)
        for k in ("gender", "emotion", "pitch", "energy", "tempo")
    }


class MockLLMClient(LLMClient):
    """Offline, deterministic stand-in. Pure function of the prompt text."""

    def complete(self, prompt: str) -> str:
        task = prompt.splitlines()[0].strip() if prompt else ""
        if task == "TASK: classify-dialog-emotions":
            return self._classify(prompt)
        if task == "TASK: basic-description":
            a = _parse_attributes(prompt)
            return phrases.render_basic_description(
                a["emotion"], a["gender"], a["pitch"], a["energy"], a["tempo"]
            )
        if task == "TASK: expand-caption":
            a = _parse_attributes(prompt)
            m = re.search(r"Apply expansion rule (\d+)", prompt)
            if m is None:
                raise ValueError("expansion prompt does not name a rule")
            rule_id = int(m.group(1))
            basic = _parse_block(prompt, "BASE")
            from ..corpus import StyleFactors

            style = StyleFactors(
                gender=a["gender"],
                pitch_hz=0.0,
                energy_rms=0.0,
                tempo_mpd=0.0,
                levels={"pitch": a["pitch"], "energy": a["energy"], "tempo": a["tempo"]},
            )
            return phrases.apply_expansion_rule(basic, rule_id, a["emotion"], style)
        if task == "TASK: verify-caption":
            a = _parse_attributes(prompt)
            caption = _parse_block(prompt, "CAPTION")
            from ..corpus import StyleFactors

            style = StyleFactors(
                gender=a["gender"],
                pitch_hz=0.0,
                energy_rms=0.0,
                tempo_mpd=0.0,
                levels={"pitch": a["pitch"], "energy": a["energy"], "tempo": a["tempo"]},
            )
            ok = phrases.caption_consistent(caption, style, a["emotion"])
            return "CONSISTENT" if ok else "INCONSISTENT"
        if task == "TASK: identify-gender":
            speaker = _parse_block(prompt, "SPEAKER")
            digest = hashlib.sha256(speaker.encode("utf-8")).digest()
            return "female" if digest[0] % 2 else "male"
        raise ValueError(f"mock client cannot route prompt starting {task!r}")

    @staticmethod
    def _classify(prompt: str) -> str:
        texts = re.findall(r"<utterance[^>]*>(.*?)</utterance>", prompt, flags=re.DOTALL)
        return "\n".join(phrases.detect_emotion(t) for t in texts)


class HttpLLMClient(LLMClient):
    """JSON-over-HTTP completion client with exponential backoff.

    Expects the endpoint to accept {"prompt": ...} and return {"text": ...}.
    The API key is read from the environment, never from config files.
    """

    API_KEY_ENV = "CONVOTTS_LLM_API_KEY"

    def __init__(
        self,
        endpoint: str,
        retry: RetryPolicy | None = None,
        timeout_seconds: float = 30.0,
        temperature: float = 0.0,
    ):
        self.endpoint = endpoint
        self.retry = retry or RetryPolicy()
        self.timeout_seconds = timeout_seconds
        self.temperature = temperature

    def complete(self, prompt: str) -> str:
        import requests

        headers = {}
        key = os.environ.get(self.API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"prompt": prompt, "temperature": self.temperature}
        last_error: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            try:
                resp = requests.post(
                    self.endpoint,
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_seconds,
                )
                resp.raise_for_status()
                return str(resp.json()["text"])
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retry.max_attempts:
                    time.sleep(self.retry.backoff_seconds * (2**attempt))
        raise LLMTransportError(
            f"LLM endpoint {self.endpoint} failed after {self.retry.max_attempts} attempts"
        ) from last_error


def parse_emotion_label(line: str) -> str | None:
    """Case-insensitive match of one response line to the 8 allowed labels."""
    cleaned = line.strip().strip(".").lower()
    for emotion in EMOTIONS:
        if cleaned == emotion.lower():
            return emotion
    return None
