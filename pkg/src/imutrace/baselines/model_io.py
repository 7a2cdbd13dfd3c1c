"""Versioned model persistence and training-log export.

Models save as a single JSON object: format version, kind tag, config,
parameter arrays as nested lists, and the training manifest. JSON float
rendering is shortest-round-trip, so float64 parameters survive a
save/load cycle exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DataError

FORMAT_VERSION = 1


def data_digest(*arrays: np.ndarray) -> str:
    """sha256 over dtype, shape, and raw bytes of each array, in order."""
    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.dtype).encode("ascii"))
        h.update(str(a.shape).encode("ascii"))
        h.update(a.tobytes())
    return h.hexdigest()


def save_model(model, path: str | Path) -> None:
    obj = model.to_json_dict()
    obj["format_version"] = FORMAT_VERSION
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path):
    """Reload a saved model, dispatching on its kind tag."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise DataError(f"model file {path} must hold a JSON object")
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"model file {path} has format_version {version!r}, expected {FORMAT_VERSION}"
        )
    kind = obj.get("kind")
    try:
        if kind == "rf":
            from .forest import RandomForestModel

            return RandomForestModel.from_json_dict(obj)
        if kind == "svm":
            from .svm import SvmModel

            return SvmModel.from_json_dict(obj)
        if kind in ("cnn", "lstm"):
            from .nn import NnModel

            return NnModel.from_json_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"model file {path} is malformed: {exc}")
    raise DataError(f"model file {path} has unknown kind {kind!r}")


def save_training_log(history: Sequence[tuple[int, float, float]], path: str | Path) -> None:
    """Write per-epoch (epoch, loss, train accuracy) rows as CSV."""
    lines = ["epoch,loss,train_accuracy"]
    for epoch, loss, accuracy in history:
        lines.append(f"{epoch},{loss!r},{accuracy!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
