"""Chat-completion transport, the deterministic mock provider, and label parsing.

Three layers live here. `complete` is a thin provider-agnostic HTTP
client for chat-completion endpoints, with bounded retries on transient
failures. `mock_complete` is an offline stand-in that re-parses the
serialized window out of the prompt, integrates gyro-z, and writes a
four-phase reasoning text (chain-of-thought) or a bare label (direct
output); it doubles as the oracle generator for tests. `parse_label`
recovers a TrajectoryLabel from free-form response text via a synonym
lexicon shipped as a versioned data file.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from importlib import resources

from .core import TrajectoryLabel, TrajectoryWindow
from .errors import (
    AmbiguousLabelError,
    ConfigError,
    LabelParseError,
    ProviderError,
    TransportError,
    UnparseableLabelError,
)
from .prompting import (
    DEFAULT_SOURCE_RATE_HZ,
    PromptBundle,
    PromptMode,
    SerializationOptions,
    TemplateSet,
    build_prompt,
)

MOCK_PROVIDER_ID = "mock"

# Mock classifier thresholds on |net heading change|, rad.
STRAIGHT_MAX_RAD = math.pi / 4
QUARTER_MAX_RAD = 3 * math.pi / 4

_RATE_PATTERN = re.compile(r"downsampled\s+to\s+([0-9]+(?:\.[0-9]+)?)\s*Hz", re.IGNORECASE)
_TOKEN_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for one chat-completion provider."""

    endpoint: str
    model: str
    token_env: str = "IMUTRACE_API_TOKEN"
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout_s: float = 30.0
    retries: int = 3
    backoff_base_s: float = 0.5
    concurrency: int = 4

    def __post_init__(self):
        if not self.endpoint:
            raise ConfigError("provider endpoint must be non-empty")
        if not self.model:
            raise ConfigError("provider model id must be non-empty")
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.retries < 0:
            raise ConfigError(f"retries must be >= 0, got {self.retries}")
        if self.concurrency < 1:
            raise ConfigError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.timeout_s <= 0:
            raise ConfigError(f"timeout must be positive, got {self.timeout_s}")
        if self.backoff_base_s < 0:
            raise ConfigError(f"backoff base must be >= 0, got {self.backoff_base_s}")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    provider: str
    latency_s: float
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("CompletionResult.text must be non-empty")


@dataclass(frozen=True)
class Prediction:
    """One classified window.

    ``label`` is None when the response text yielded no usable label;
    evaluation scores such predictions as wrong and reports them in a
    dedicated unparsed column instead of dropping them. ``mode`` is
    None for predictions that did not go through a prompt (the trained
    baselines reuse this type).
    """

    window_id: str
    label: Optional[TrajectoryLabel]
    raw_text: str
    mode: Optional[PromptMode]
    provider: str


@dataclass(frozen=True)
class BatchResult:
    """Outcome of classifying one batch of windows.

    ``predictions`` covers every window whose completion succeeded
    (label may still be None when the text was unparseable);
    ``failures`` records (window_id, error message) for calls that
    raised transport or provider errors.
    """

    predictions: tuple[Prediction, ...]
    failures: tuple[tuple[str, str], ...]


def complete(cfg: ProviderConfig, bundle: PromptBundle) -> CompletionResult:
    """POST ``bundle`` to the provider and return the first choice's text.

    Retries transient failures (timeout, connection error, HTTP 429 and
    5xx) with exponential backoff, ``backoff_base_s * 2**attempt``
    between attempts, for at most ``retries`` extra attempts.
    """
    token = os.environ.get(cfg.token_env, "")
    if not token:
        raise ConfigError(
            f"auth token environment variable {cfg.token_env!r} is empty or unset"
        )
    body = {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_tokens,
        "messages": [
            {"role": "system", "content": bundle.instruction},
            {"role": "user", "content": bundle.question},
        ],
    }
    headers = {"Authorization": f"Bearer {token}"}
    last_status: Optional[int] = None
    attempts = 0
    for attempt in range(cfg.retries + 1):
        attempts = attempt + 1
        started = time.perf_counter()
        try:
            resp = requests.post(
                cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout_s
            )
        except (requests.Timeout, requests.ConnectionError):
            last_status = None
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}", attempts=attempts)
        else:
            status = resp.status_code
            if status == 429 or status >= 500:
                last_status = status
            elif status >= 400:
                raise TransportError(
                    f"provider rejected the request with HTTP {status}",
                    status=status,
                    attempts=attempts,
                )
            else:
                return _read_completion(cfg, resp, time.perf_counter() - started)
        if attempt < cfg.retries:
            time.sleep(cfg.backoff_base_s * (2**attempt))
    detail = f"HTTP {last_status}" if last_status is not None else "timeout"
    raise TransportError(
        f"retries exhausted after {attempts} attempts (last failure: {detail})",
        status=last_status,
        attempts=attempts,
    )


def _read_completion(
    cfg: ProviderConfig, resp: "requests.Response", latency_s: float
) -> CompletionResult:
    try:
        payload = resp.json()
    except ValueError:
        raise ProviderError("provider returned a non-JSON response body")
    try:
        text = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProviderError("response JSON lacks choices[0].message.content")
    if not isinstance(text, str) or not text:
        raise ProviderError("provider returned empty response text")
    usage = payload.get("usage") or {}
    return CompletionResult(
        text=text,
        provider=cfg.model,
        latency_s=latency_s,
        prompt_tokens=usage.get("prompt_tokens"),
        completion_tokens=usage.get("completion_tokens"),
    )


def _parse_embedded_window(question: str) -> tuple[list[list[float]], float]:
    """Recover (sample rows, sample rate) from a rendered question.

    Assumes the default serialization layout: one line per sample, nine
    numbers in the default axis order, and a context sentence quoting
    the downsampled rate as "downsampled to <rate> Hz".
    """
    rows: list[list[float]] = []
    for line in question.splitlines():
        tokens = [t for t in _TOKEN_SPLIT.split(line.strip()) if t]
        if len(tokens) != 9:
            continue
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            continue
        rows.append(values)
    if len(rows) < 2:
        raise ProviderError(
            f"mock provider found {len(rows)} serialized sample lines, needs >= 2"
        )
    match = _RATE_PATTERN.search(question)
    if match is None:
        raise ProviderError("mock provider could not find the downsampled rate in the question")
    rate = float(match.group(1))
    if rate <= 0:
        raise ProviderError(f"mock provider parsed a non-positive sample rate {rate}")
    return rows, rate


def _classify_heading(dtheta: float) -> TrajectoryLabel:
    if abs(dtheta) < STRAIGHT_MAX_RAD:
        return TrajectoryLabel.STRAIGHT
    if abs(dtheta) < QUARTER_MAX_RAD:
        return TrajectoryLabel.TURN_LEFT if dtheta > 0 else TrajectoryLabel.TURN_RIGHT
    return TrajectoryLabel.TURN_AROUND


def mock_complete(bundle: PromptBundle) -> CompletionResult:
    """Deterministic offline provider.

    Re-parses the serialized window embedded in the question, integrates
    the gyro-z column by the trapezoid rule, and classifies the net
    heading change: below pi/4 in magnitude is straight, up to 3pi/4 a
    quarter turn (sign picks the side, positive yaw is a left turn),
    beyond that a turn around. Chain-of-thought bundles get a four-phase
    reasoning text ending in the conclusion phrasing; direct-output
    bundles get the bare label.
    """
    started = time.perf_counter()
    rows, rate = _parse_embedded_window(bundle.question)
    gz = [row[5] for row in rows]
    dt = 1.0 / rate
    dtheta = sum((gz[i] + gz[i + 1]) * 0.5 * dt for i in range(len(gz) - 1))
    label = _classify_heading(dtheta)
    if bundle.mode is PromptMode.DO:
        text = label.value
    else:
        hyphenated = label.value.replace(" ", "-")
        degrees = math.degrees(dtheta)
        text = (
            f"Phase 1, restating the problem: I am given {len(rows)} samples of "
            f"9-axis IMU data from a robot-mounted smartphone, downsampled to "
            f"{rate:g} Hz, and must identify the maneuver.\n"
            f"Phase 2, expert knowledge: the gyroscope z axis reads the yaw rate, "
            f"and its time integral is the net heading change. Near zero means an "
            f"unchanged course, about +90 degrees a counterclockwise quarter "
            f"rotation, about -90 degrees a clockwise quarter rotation, and near "
            f"180 degrees in magnitude a reversal of course.\n"
            f"Phase 3, data analysis: the trapezoidal integral of the gyro-z "
            f"column over these samples gives a net heading change of "
            f"{degrees:.1f} degrees.\n"
            f"Phase 4, conclusion: combining the measured heading change with the "
            f"knowledge above, the data is most likely a '{hyphenated}' trajectory."
        )
    return CompletionResult(
        text=text, provider=MOCK_PROVIDER_ID, latency_s=time.perf_counter() - started
    )


@dataclass(frozen=True)
class LabelLexicon:
    """Compiled synonym table mapping phrases to trajectory labels."""

    version: int
    patterns: tuple[tuple[TrajectoryLabel, "re.Pattern[str]"], ...]

    @classmethod
    def from_json_dict(cls, obj: dict) -> "LabelLexicon":
        if not isinstance(obj, dict):
            raise ConfigError("lexicon must be a JSON object")
        version = obj.get("version")
        if not isinstance(version, int) or version < 1:
            raise ConfigError(f"lexicon version must be a positive integer, got {version!r}")
        labels = obj.get("labels")
        if not isinstance(labels, dict) or not labels:
            raise ConfigError("lexicon must carry a non-empty 'labels' object")
        compiled: list[tuple[TrajectoryLabel, "re.Pattern[str]"]] = []
        for key, phrases in labels.items():
            label = TrajectoryLabel.from_string(key)
            if not isinstance(phrases, list) or not phrases:
                raise ConfigError(f"lexicon entry {key!r} must list at least one phrase")
            for phrase in phrases:
                if not isinstance(phrase, str) or not phrase.strip():
                    raise ConfigError(f"lexicon entry {key!r} holds an empty phrase")
                compiled.append((label, _compile_phrase(phrase)))
        return cls(version=version, patterns=tuple(compiled))

    @classmethod
    def load(cls, path: str | Path) -> "LabelLexicon":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    @classmethod
    def load_default(cls) -> "LabelLexicon":
        return _default_lexicon()


def _compile_phrase(phrase: str) -> "re.Pattern[str]":
    # Whitespace or hyphens between words both match, so "turn left",
    # "turn-left", and "turn  left" are one entry.
    words = phrase.split()
    body = r"[\s\-]+".join(re.escape(word) for word in words)
    return re.compile(rf"\b{body}\b", re.IGNORECASE)


_LEXICON_CACHE: list[LabelLexicon] = []


def _default_lexicon() -> LabelLexicon:
    if not _LEXICON_CACHE:
        text = resources.files("imutrace").joinpath("lexicon.json").read_text("utf-8")
        _LEXICON_CACHE.append(LabelLexicon.from_json_dict(json.loads(text)))
    return _LEXICON_CACHE[0]


def parse_label(
    text: str, mode: PromptMode, lexicon: Optional[LabelLexicon] = None
) -> TrajectoryLabel:
    """Extract a TrajectoryLabel from free-form response text.

    Case-insensitive lexicon match; when several distinct labels match,
    the one closest to the end of the text wins, because chain-of-thought
    responses state their conclusion last. Direct-output responses are
    bare labels, which the same rule handles trivially, so ``mode`` only
    flavors error messages. Two different labels ending at the same
    position raise AmbiguousLabelError; no match raises
    UnparseableLabelError.
    """
    if lexicon is None:
        lexicon = _default_lexicon()
    best_end = -1
    best_labels: set[TrajectoryLabel] = set()
    for label, pattern in lexicon.patterns:
        for match in pattern.finditer(text):
            end = match.end()
            if end > best_end:
                best_end = end
                best_labels = {label}
            elif end == best_end:
                best_labels.add(label)
    if not best_labels:
        snippet = text[:80]
        raise UnparseableLabelError(
            f"no trajectory label found in {mode.value} response: {snippet!r}"
        )
    if len(best_labels) > 1:
        names = ", ".join(sorted(lb.value for lb in best_labels))
        raise AmbiguousLabelError(
            f"labels {{{names}}} tie at text position {best_end}"
        )
    return next(iter(best_labels))


def classify_windows(
    windows: Sequence[TrajectoryWindow],
    mode: PromptMode,
    *,
    cfg: Optional[ProviderConfig] = None,
    completer: Optional[Callable[[PromptBundle], CompletionResult]] = None,
    templates: Optional[TemplateSet] = None,
    opts: Optional[SerializationOptions] = None,
    source_rate_hz: float = DEFAULT_SOURCE_RATE_HZ,
    lexicon: Optional[LabelLexicon] = None,
    concurrency: Optional[int] = None,
    transcript_path: Optional[str | Path] = None,
) -> BatchResult:
    """Classify every window through one provider, in parallel.

    Predictions come back sorted by window_id regardless of completion
    order. A response whose text yields no label becomes a prediction
    with ``label=None``; a call that raises a transport or provider
    error lands in ``failures`` instead, so one bad window cannot
    abort a batch. Config errors (bad templates, missing auth) do
    abort: they would fail every window the same way. With
    ``transcript_path`` set, one JSON object per successful call
    (window_id, bundle hash, text, latency) is appended in window_id
    order.
    """
    if completer is None:
        completer = mock_complete if cfg is None else (lambda b: complete(cfg, b))
    if concurrency is None:
        concurrency = cfg.concurrency if cfg is not None else 1
    if concurrency < 1:
        raise ConfigError(f"concurrency must be >= 1, got {concurrency}")
    if templates is None:
        templates = TemplateSet.load_default()

    bundles = [
        build_prompt(
            w, mode, opts, templates=templates, source_rate_hz=source_rate_hz
        )
        for w in windows
    ]

    def attempt(bundle: PromptBundle):
        try:
            return completer(bundle)
        except (TransportError, ProviderError) as exc:
            return exc

    if concurrency == 1 or len(bundles) <= 1:
        results = [attempt(b) for b in bundles]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(attempt, bundles))

    paired = sorted(zip(bundles, results), key=lambda pair: pair[0].window_id)
    predictions: list[Prediction] = []
    failures: list[tuple[str, str]] = []
    transcript_rows: list[str] = []
    for bundle, result in paired:
        if isinstance(result, Exception):
            failures.append((bundle.window_id, str(result)))
            continue
        try:
            label: Optional[TrajectoryLabel] = parse_label(
                result.text, mode, lexicon=lexicon
            )
        except LabelParseError:
            label = None
        predictions.append(
            Prediction(
                window_id=bundle.window_id,
                label=label,
                raw_text=result.text,
                mode=mode,
                provider=result.provider,
            )
        )
        if transcript_path is not None:
            transcript_rows.append(
                json.dumps(
                    {
                        "window_id": bundle.window_id,
                        "bundle_sha256": bundle.digest(),
                        "text": result.text,
                        "latency_s": result.latency_s,
                    },
                    ensure_ascii=True,
                )
            )
    if transcript_path is not None:
        with open(transcript_path, "a", encoding="utf-8") as fh:
            for row in transcript_rows:
                fh.write(row + "\n")
    return BatchResult(predictions=tuple(predictions), failures=tuple(failures))
