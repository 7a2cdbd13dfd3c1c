"""Confusion matrices, macro metrics, the experiment runner, and reports.

The confusion matrix is 4x4 (rows truth, columns prediction, fixed
label order) plus a reserved per-truth-row "unparsed" column for
responses that yielded no label. Unparsed counts never enter precision
denominators (nothing was predicted) but do enter recall denominators
(the truth instance existed), so refusals depress recall instead of
vanishing.

Reports render as an aligned text table and as JSON lines, one cell
per line, both referencing the run manifest by hash. All rendering is
deterministic: with the mock provider, rerunning a manifest reproduces
the report byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    LABEL_ORDER,
    Part,
    Scenario,
    SplitAssignment,
    TrajectoryWindow,
    dataset_hash,
    downsample,
)
from .errors import ConfigError, DataError
from .llm import MOCK_PROVIDER_ID, Prediction, ProviderConfig, classify_windows
from .prompting import PromptMode, SerializationOptions, TemplateSet
from .baselines.features import feature_matrix, label_vector
from .baselines.forest import RfConfig, predict_rf_batch, train_rf
from .baselines.nn import CnnConfig, LstmConfig, predict_nn_batch, train_cnn, train_lstm
from .baselines.svm import SvmConfig, predict_svm_batch, train_svm

N_CLASSES = len(LABEL_ORDER)

BASELINE_KINDS = ("rf", "svm", "cnn", "lstm")

DEFAULT_TARGET_RATE_HZ = 3.0

# Published targets this testbed is benchmarked against (unseen split).
REFERENCE_TARGETS = {"indoor": 0.836, "outdoor": 0.767}

REFERENCE_FOOTER = (
    "Reference targets: GPT4-CoT unseen F1 83.6% (indoor), 76.7% (outdoor)."
)

_TEST_NAMES = {Part.SEEN_TEST: "Seen", Part.UNSEEN_TEST: "Unseen"}

_DISPLAY = {"rf": "RF", "svm": "SVM", "cnn": "CNN", "lstm": "LSTM"}


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """4x4 counts plus the reserved unparsed column, rows are truth."""

    counts: np.ndarray  # (4, 4) int64
    unparsed: np.ndarray  # (4,) int64

    def __post_init__(self):
        if self.counts.shape != (N_CLASSES, N_CLASSES):
            raise DataError(f"confusion counts must be 4x4, got {self.counts.shape}")
        if self.unparsed.shape != (N_CLASSES,):
            raise DataError(f"unparsed column must have 4 rows, got {self.unparsed.shape}")
        if np.any(self.counts < 0) or np.any(self.unparsed < 0):
            raise DataError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unparsed.sum())

    def same_counts(self, other: "ConfusionMatrix") -> bool:
        return bool(
            np.array_equal(self.counts, other.counts)
            and np.array_equal(self.unparsed, other.unparsed)
        )


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True, eq=False)
class CellResult:
    confusion: Optional[ConfusionMatrix]
    metrics: Optional[Metrics]
    skipped_reason: Optional[str] = None
    n_windows: int = 0
    n_failures: int = 0

    @property
    def skipped(self) -> bool:
        return self.skipped_reason is not None


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Cells keyed by (model id, scenario, split part), plus the manifest."""

    cells: Mapping[tuple[str, Scenario, Part], CellResult]
    manifest: dict

    def manifest_digest(self) -> str:
        if set(self.manifest) == {"sha256"}:
            # reconstructed from JSONL output, which carries only the hash
            return self.manifest["sha256"]
        return canonical_digest(self.manifest)


def canonical_digest(obj: dict) -> str:
    """sha256 of the canonical (sorted, compact) JSON encoding."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def confusion(
    preds: Sequence[Prediction], truths: Sequence[TrajectoryWindow]
) -> ConfusionMatrix:
    """Count predictions against labeled truth windows by window_id."""
    truth_labels: dict[str, int] = {}
    for w in truths:
        if w.label is None:
            raise DataError(f"truth window {w.id!r} is unlabeled")
        truth_labels[w.id] = w.label.index
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    unparsed = np.zeros(N_CLASSES, dtype=np.int64)
    for pred in preds:
        if pred.window_id not in truth_labels:
            raise DataError(f"prediction for {pred.window_id!r} has no labeled truth")
        row = truth_labels[pred.window_id]
        if pred.label is None:
            unparsed[row] += 1
        else:
            counts[row, pred.label.index] += 1
    return ConfusionMatrix(counts=counts, unparsed=unparsed)


def per_class_metrics(m: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (precision, recall, f1) arrays with 0 on zero denominators."""
    tp = np.diag(m.counts).astype(np.float64)
    fp = m.counts.sum(axis=0) - tp
    # row totals include the unparsed column: those truths existed
    fn = (m.counts.sum(axis=1) + m.unparsed) - tp
    precision = np.divide(tp, tp + fp, out=np.zeros(N_CLASSES), where=(tp + fp) > 0)
    recall = np.divide(tp, tp + fn, out=np.zeros(N_CLASSES), where=(tp + fn) > 0)
    both = precision + recall
    f1 = np.divide(
        2.0 * precision * recall, both, out=np.zeros(N_CLASSES), where=both > 0
    )
    return precision, recall, f1


def metrics(m: ConfusionMatrix) -> Metrics:
    """Macro-averaged precision, recall, and F1 over the four classes."""
    if m.total == 0:
        raise DataError("cannot compute metrics for an empty confusion matrix")
    precision, recall, f1 = per_class_metrics(m)
    return Metrics(
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
    )


# --------------------------------------------------------------------------
# experiment runner


def _llm_model_id(provider: str, mode: PromptMode) -> str:
    return f"{provider}-{mode.value}"


def _display_name(model_id: str) -> str:
    if model_id in _DISPLAY:
        return _DISPLAY[model_id]
    if model_id.endswith("-cot"):
        return model_id[: -len("-cot")] + "-CoT"
    if model_id.endswith("-do"):
        return model_id[: -len("-do")] + "-DO"
    return model_id


def _baseline_predictions(
    kind: str,
    train_full: Sequence[TrajectoryWindow],
    train_down: Sequence[TrajectoryWindow],
    eval_full: Sequence[TrajectoryWindow],
    eval_down: Sequence[TrajectoryWindow],
    configs: dict,
) -> list[Prediction]:
    """Train one baseline and predict the evaluation windows.

    RF and SVM consume statistical features of the full-rate windows;
    CNN and LSTM consume the downsampled raw windows, the same
    sequences the prompt path sees.
    """
    if kind == "rf":
        model = train_rf(feature_matrix(train_full), label_vector(train_full), configs["rf"])
        labels, _ = predict_rf_batch(model, feature_matrix(eval_full))
        ids = [w.id for w in eval_full]
    elif kind == "svm":
        model = train_svm(feature_matrix(train_full), label_vector(train_full), configs["svm"])
        labels, _ = predict_svm_batch(model, feature_matrix(eval_full))
        ids = [w.id for w in eval_full]
    elif kind == "cnn":
        model = train_cnn(train_down, configs["cnn"])
        labels, _ = predict_nn_batch(model, eval_down)
        ids = [w.id for w in eval_down]
    elif kind == "lstm":
        model = train_lstm(train_down, configs["lstm"])
        labels, _ = predict_nn_batch(model, eval_down)
        ids = [w.id for w in eval_down]
    else:
        raise ConfigError(f"unknown baseline kind {kind!r}")
    return [
        Prediction(window_id=i, label=lb, raw_text="", mode=None, provider=kind)
        for i, lb in zip(ids, labels)
    ]


def run_experiment(
    windows: Sequence[TrajectoryWindow],
    split: SplitAssignment,
    *,
    baselines: Sequence[str] = BASELINE_KINDS,
    modes: Sequence[PromptMode] = (PromptMode.COT, PromptMode.DO),
    provider_cfg: Optional[ProviderConfig] = None,
    rf_cfg: Optional[RfConfig] = None,
    svm_cfg: Optional[SvmConfig] = None,
    cnn_cfg: Optional[CnnConfig] = None,
    lstm_cfg: Optional[LstmConfig] = None,
    target_rate_hz: float = DEFAULT_TARGET_RATE_HZ,
    templates: Optional[TemplateSet] = None,
    opts: Optional[SerializationOptions] = None,
    skip_threshold: float = 0.5,
    manifest_extra: Optional[dict] = None,
    transcript_path=None,
) -> EvalReport:
    """Fill the full (model, scenario, split) grid.

    Baselines train per scenario on that scenario's Train windows and
    are evaluated on both SeenTest and UnseenTest; prompt modes are
    evaluated on UnseenTest only. The mock provider runs when no
    provider config is given.
    """
    for kind in baselines:
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline kind {kind!r}")
    split.validate(windows)
    if templates is None:
        templates = TemplateSet.load_default()
    configs = {
        "rf": rf_cfg if rf_cfg is not None else RfConfig(),
        "svm": svm_cfg if svm_cfg is not None else SvmConfig(),
        "cnn": cnn_cfg if cnn_cfg is not None else CnnConfig(),
        "lstm": lstm_cfg if lstm_cfg is not None else LstmConfig(),
    }
    provider = MOCK_PROVIDER_ID if provider_cfg is None else provider_cfg.model

    down = {w.id: downsample(w, target_rate_hz) for w in windows}
    by_part_scenario: dict[tuple[Part, Scenario], list[TrajectoryWindow]] = {}
    for w in windows:
        by_part_scenario.setdefault((split.assignment[w.id], w.scenario), []).append(w)

    cells: dict[tuple[str, Scenario, Part], CellResult] = {}

    for scenario in Scenario:
        train_full = by_part_scenario.get((Part.TRAIN, scenario), [])
        train_down = [down[w.id] for w in train_full]
        for kind in baselines:
            for part in (Part.SEEN_TEST, Part.UNSEEN_TEST):
                eval_full = by_part_scenario.get((part, scenario), [])
                eval_down = [down[w.id] for w in eval_full]
                key = (kind, scenario, part)
                if not train_full:
                    cells[key] = CellResult(
                        None, None, skipped_reason="no training windows in scenario"
                    )
                    continue
                if not eval_full:
                    cells[key] = CellResult(
                        None, None, skipped_reason="no evaluation windows in scenario"
                    )
                    continue
                preds = _baseline_predictions(
                    kind, train_full, train_down, eval_full, eval_down, configs
                )
                cm = confusion(preds, eval_full)
                cells[key] = CellResult(cm, metrics(cm), n_windows=len(eval_full))

        for mode in modes:
            key = (_llm_model_id(provider, mode), scenario, Part.UNSEEN_TEST)
            eval_full = by_part_scenario.get((Part.UNSEEN_TEST, scenario), [])
            if not eval_full:
                cells[key] = CellResult(
                    None, None, skipped_reason="no evaluation windows in scenario"
                )
                continue
            eval_down = [down[w.id] for w in eval_full]
            batch = classify_windows(
                eval_down,
                mode,
                cfg=provider_cfg,
                templates=templates,
                opts=opts,
                transcript_path=transcript_path,
            )
            n_total = len(eval_down)
            n_failed = len(batch.failures)
            if n_failed > skip_threshold * n_total:
                cells[key] = CellResult(
                    None,
                    None,
                    skipped_reason=f"{n_failed}/{n_total} provider calls failed",
                    n_windows=n_total,
                    n_failures=n_failed,
                )
                continue
            cm = confusion(batch.predictions, eval_full)
            cells[key] = CellResult(
                cm, metrics(cm), n_windows=n_total, n_failures=n_failed
            )

    manifest = {
        "dataset_sha256": dataset_hash(windows),
        "split_sha256": canonical_digest(split.to_json_dict()),
        "template_sha256": templates.digest(),
        "provider": provider,
        "provider_config_sha256": (
            MOCK_PROVIDER_ID
            if provider_cfg is None
            else canonical_digest(dict(provider_cfg.__dict__))
        ),
        "modes": [m.value for m in modes],
        "baselines": list(baselines),
        "baseline_configs": {k: dict(configs[k].__dict__) for k in BASELINE_KINDS},
        "target_rate_hz": target_rate_hz,
        "reference_targets": dict(REFERENCE_TARGETS),
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    return EvalReport(cells=cells, manifest=manifest)


# --------------------------------------------------------------------------
# rendering


def _percent(value: float) -> str:
    # one decimal, halves away from zero, matching hand-rounded tables
    q = Decimal(value * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{q}%"


def _cell_sort_key(key: tuple[str, Scenario, Part]):
    model_id, scenario, part = key
    try:
        model_rank = (0, BASELINE_KINDS.index(model_id), model_id)
    except ValueError:
        model_rank = (1, 0, model_id)
    scenarios = list(Scenario)
    parts = [Part.SEEN_TEST, Part.UNSEEN_TEST]
    return (model_rank, scenarios.index(scenario), parts.index(part))


def _sorted_cells(r: EvalReport):
    return sorted(r.cells.items(), key=lambda item: _cell_sort_key(item[0]))


def render_report(r: EvalReport, format: str = "text") -> str:
    if format == "text":
        return _render_text(r)
    if format == "jsonl":
        return _render_jsonl(r)
    raise ConfigError(f"unknown report format {format!r}, expected 'text' or 'jsonl'")


def _render_text(r: EvalReport) -> str:
    headers = ("Models", "Scenarios", "Test subject", "Precision", "Recall", "F1-Score", "Unparsed")
    rows = []
    for (model_id, scenario, part), cell in _sorted_cells(r):
        name = _display_name(model_id)
        scen = scenario.value.capitalize()
        test = _TEST_NAMES[part]
        if cell.skipped:
            rows.append((name, scen, test, f"skipped ({cell.skipped_reason})", "", "", ""))
        else:
            rows.append(
                (
                    name,
                    scen,
                    test,
                    _percent(cell.metrics.precision),
                    _percent(cell.metrics.recall),
                    _percent(cell.metrics.f1),
                    str(int(cell.confusion.unparsed.sum())),
                )
            )
    widths = [
        max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = []
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip())
    lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))).rstrip())
    lines.append("")
    lines.append(REFERENCE_FOOTER)
    lines.append(f"Manifest sha256: {r.manifest_digest()}")
    return "\n".join(lines) + "\n"


def _render_jsonl(r: EvalReport) -> str:
    lines = [json.dumps({"manifest_sha256": r.manifest_digest()}, sort_keys=True)]
    for (model_id, scenario, part), cell in _sorted_cells(r):
        obj: dict = {
            "model": model_id,
            "scenario": scenario.value,
            "split": part.value,
            "n_windows": cell.n_windows,
            "n_failures": cell.n_failures,
        }
        if cell.skipped:
            obj["skipped"] = cell.skipped_reason
        else:
            obj["precision"] = cell.metrics.precision
            obj["recall"] = cell.metrics.recall
            obj["f1"] = cell.metrics.f1
            obj["confusion"] = cell.confusion.counts.tolist()
            obj["unparsed"] = cell.confusion.unparsed.tolist()
        lines.append(json.dumps(obj, sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_report_jsonl(text: str) -> EvalReport:
    """Rebuild an EvalReport from its JSONL rendering.

    The manifest comes back as just its hash; rendering the parsed
    report again reproduces the input bytes.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DataError("empty JSONL report")
    try:
        head = json.loads(lines[0])
        manifest = {"sha256": head["manifest_sha256"]}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed JSONL report header: {exc}")
    cells: dict[tuple[str, Scenario, Part], CellResult] = {}
    for line in lines[1:]:
        try:
            obj = json.loads(line)
            key = (
                obj["model"],
                Scenario(obj["scenario"]),
                Part(obj["split"]),
            )
            if "skipped" in obj:
                cells[key] = CellResult(
                    None,
                    None,
                    skipped_reason=obj["skipped"],
                    n_windows=obj["n_windows"],
                    n_failures=obj["n_failures"],
                )
            else:
                cm = ConfusionMatrix(
                    counts=np.asarray(obj["confusion"], dtype=np.int64),
                    unparsed=np.asarray(obj["unparsed"], dtype=np.int64),
                )
                cells[key] = CellResult(
                    cm,
                    Metrics(obj["precision"], obj["recall"], obj["f1"]),
                    n_windows=obj["n_windows"],
                    n_failures=obj["n_failures"],
                )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed JSONL report line: {exc}")
    return EvalReport(cells=cells, manifest=manifest)
