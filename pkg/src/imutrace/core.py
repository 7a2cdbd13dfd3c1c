"""Canonical IMU data model: samples, labeled windows, CSV ingestion,
mean-pooling downsampling, overlapping window slicing, and the
3:1:1:1 train/validation/seen-test/unseen-test split.

All values are plain floats in SI-ish units: accelerometer m/s^2,
gyroscope rad/s, magnetometer microtesla, time in seconds since the
start of the window. Everything here is immutable after construction
and safe to share across threads.

CSV layout (UTF-8, header required)::

    recording_id,scenario,label,t,ax,ay,az,gx,gy,gz,mx,my,mz

The CSV has no dedicated recording-group column, so ``recording_id``
is written as ``<recording_group>/<window_id>``; on ingestion the part
before the first slash is taken as the group (the whole id when there
is no slash). Floats are rendered with :func:`repr`, the shortest
string that parses back to the identical value, so a serialize/ingest
round trip is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DataError

# Consecutive timestamp deltas must equal 1/rate within this slack (seconds).
TIMESTAMP_TOLERANCE_S = 1e-6

CSV_COLUMNS = (
    "recording_id", "scenario", "label", "t",
    "ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz",
)

# Axis order used everywhere a window is flattened to a (n, 9) array.
AXIS_NAMES = ("ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz")


class TrajectoryLabel(Enum):
    """The four trajectory classes, in the fixed tie-break order."""

    STRAIGHT = "straight"
    TURN_RIGHT = "turn right"
    TURN_LEFT = "turn left"
    TURN_AROUND = "turn around"

    @classmethod
    def from_string(cls, text: str) -> "TrajectoryLabel":
        for label in cls:
            if label.value == text:
                return label
        raise DataError(f"unknown trajectory label: {text!r}")

    @property
    def index(self) -> int:
        return LABEL_ORDER.index(self)


LABEL_ORDER = (
    TrajectoryLabel.STRAIGHT,
    TrajectoryLabel.TURN_RIGHT,
    TrajectoryLabel.TURN_LEFT,
    TrajectoryLabel.TURN_AROUND,
)


class Scenario(Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"

    @classmethod
    def from_string(cls, text: str) -> "Scenario":
        for scenario in cls:
            if scenario.value == text:
                return scenario
        raise DataError(f"unknown scenario: {text!r}")


class Part(Enum):
    """The four dataset partitions."""

    TRAIN = "train"
    VALIDATION = "validation"
    SEEN_TEST = "seen_test"
    UNSEEN_TEST = "unseen_test"


PART_ORDER = (Part.TRAIN, Part.VALIDATION, Part.SEEN_TEST, Part.UNSEEN_TEST)
SPLIT_WEIGHTS = {Part.TRAIN: 3, Part.VALIDATION: 1, Part.SEEN_TEST: 1, Part.UNSEEN_TEST: 1}


@dataclass(frozen=True)
class ImuSample:
    """One timestamped 9-axis reading."""

    t: float
    accel: tuple[float, float, float]
    gyro: tuple[float, float, float]
    mag: tuple[float, float, float]

    def __post_init__(self):
        values = (self.t, *self.accel, *self.gyro, *self.mag)
        if not all(math.isfinite(v) for v in values):
            raise DataError("IMU sample contains a non-finite value")
        if self.t < 0:
            raise DataError(f"sample timestamp must be >= 0, got {self.t}")

    def as_row(self) -> tuple[float, ...]:
        return (*self.accel, *self.gyro, *self.mag)


@dataclass(frozen=True)
class TrajectoryWindow:
    """A fixed-duration labeled sequence of samples; the unit of classification.

    ``recording_group`` identifies the scene/session the window came from
    and drives the seen-vs-unseen partitioning: unseen-test windows belong
    to groups held out of training entirely.
    """

    id: str
    scenario: Scenario
    recording_group: str
    rate: float
    samples: tuple[ImuSample, ...]
    label: Optional[TrajectoryLabel] = None

    def __post_init__(self):
        if len(self.samples) < 2:
            raise DataError(f"window {self.id!r} needs at least 2 samples")
        if self.rate <= 0:
            raise DataError(f"window {self.id!r} has non-positive rate {self.rate}")
        expected_dt = 1.0 / self.rate
        prev = self.samples[0].t
        for sample in self.samples[1:]:
            dt = sample.t - prev
            if dt <= 0:
                raise DataError(
                    f"window {self.id!r} has non-increasing timestamps "
                    f"near t={sample.t}"
                )
            if abs(dt - expected_dt) > TIMESTAMP_TOLERANCE_S:
                raise DataError(
                    f"window {self.id!r}: timestamp delta {dt:.9f} does not "
                    f"match 1/rate={expected_dt:.9f}"
                )
            prev = sample.t

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        """Window duration in seconds (sample count over rate)."""
        return len(self.samples) / self.rate

    def to_array(self) -> np.ndarray:
        """(n, 9) float64 array in the canonical ax..mz axis order."""
        return np.array([s.as_row() for s in self.samples], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class SplitAssignment:
    """Total partition of window ids over the four parts."""

    assignment: Mapping[str, Part]

    def part_ids(self, part: Part) -> list[str]:
        return sorted(wid for wid, p in self.assignment.items() if p is part)

    def counts(self) -> dict[Part, int]:
        out = {part: 0 for part in PART_ORDER}
        for part in self.assignment.values():
            out[part] += 1
        return out

    def validate(self, windows: Sequence[TrajectoryWindow]) -> None:
        """Check partition totality, the 3:1:1:1 ratio (each part within
        one window of its exact share), and unseen-group exclusion."""
        ids = [w.id for w in windows]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate window ids in dataset")
        if set(ids) != set(self.assignment):
            raise DataError("split does not cover exactly the dataset's window ids")
        n = len(ids)
        total_weight = sum(SPLIT_WEIGHTS.values())
        counts = self.counts()
        for part in PART_ORDER:
            exact = n * SPLIT_WEIGHTS[part] / total_weight
            if abs(counts[part] - exact) > 1:
                raise DataError(
                    f"{part.value} has {counts[part]} windows; exact share is {exact:.2f}"
                )
        group_of = {w.id: w.recording_group for w in windows}
        unseen_groups = {group_of[wid] for wid in self.part_ids(Part.UNSEEN_TEST)}
        for part in (Part.TRAIN, Part.VALIDATION, Part.SEEN_TEST):
            for wid in self.part_ids(part):
                if group_of[wid] in unseen_groups:
                    raise DataError(
                        f"recording group {group_of[wid]!r} appears in both "
                        f"unseen_test and {part.value}"
                    )

    def to_json_dict(self) -> dict[str, str]:
        return {wid: part.value for wid, part in sorted(self.assignment.items())}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, str]) -> "SplitAssignment":
        by_value = {part.value: part for part in Part}
        try:
            return cls({wid: by_value[v] for wid, v in data.items()})
        except KeyError as exc:
            raise DataError(f"unknown split part {exc.args[0]!r}") from exc


def format_float(value: float) -> str:
    """Shortest decimal string that parses back to the identical float."""
    return repr(float(value))


def serialize_csv(windows: Iterable[TrajectoryWindow]) -> str:
    """Render windows in the canonical CSV layout (see module docstring)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for w in windows:
        recording_id = f"{w.recording_group}/{w.id}"
        label = w.label.value if w.label is not None else ""
        for s in w.samples:
            writer.writerow(
                [recording_id, w.scenario.value, label, format_float(s.t)]
                + [format_float(v) for v in s.as_row()]
            )
    return buf.getvalue()


def dataset_hash(windows: Sequence[TrajectoryWindow]) -> str:
    """SHA-256 of the canonical CSV serialization."""
    return hashlib.sha256(serialize_csv(windows).encode("utf-8")).hexdigest()


def ingest_csv(stream: Iterable[str]) -> list[TrajectoryWindow]:
    """Parse the canonical CSV layout into windows.

    One window is produced per distinct recording id, in order of first
    appearance. Timestamps within a recording must be strictly
    increasing as written; the declared rate is inferred from the median
    timestamp delta.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("CSV stream is empty (missing header)")
    if tuple(header) != CSV_COLUMNS:
        raise DataError(f"unexpected CSV header: {header!r}")

    order: list[str] = []
    rows: dict[str, list[tuple[float, ImuSample]]] = {}
    meta: dict[str, tuple[Scenario, Optional[TrajectoryLabel]]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise DataError(
                f"line {line_no}: expected {len(CSV_COLUMNS)} columns, got {len(row)}"
            )
        recording_id, scenario_text, label_text = row[0], row[1], row[2]
        try:
            numbers = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise DataError(f"line {line_no}: non-numeric field ({exc})") from exc
        scenario = Scenario.from_string(scenario_text)
        label = TrajectoryLabel.from_string(label_text) if label_text else None
        if recording_id not in rows:
            order.append(recording_id)
            rows[recording_id] = []
            meta[recording_id] = (scenario, label)
        elif meta[recording_id] != (scenario, label):
            raise DataError(
                f"line {line_no}: scenario/label changed within recording "
                f"{recording_id!r}"
            )
        t = numbers[0]
        sample = ImuSample(
            t=t,
            accel=(numbers[1], numbers[2], numbers[3]),
            gyro=(numbers[4], numbers[5], numbers[6]),
            mag=(numbers[7], numbers[8], numbers[9]),
        )
        rows[recording_id].append((t, sample))

    windows = []
    for recording_id in order:
        scenario, label = meta[recording_id]
        pairs = rows[recording_id]
        times = [t for t, _ in pairs]
        if len(pairs) < 2:
            raise DataError(f"recording {recording_id!r} has fewer than 2 samples")
        deltas = np.diff(times)
        if np.any(deltas <= 0):
            raise DataError(
                f"recording {recording_id!r} has non-monotonic timestamps"
            )
        rate = 1.0 / float(np.median(deltas))
        group, _, window_id = recording_id.partition("/")
        if not window_id:
            group, window_id = recording_id, recording_id
        windows.append(
            TrajectoryWindow(
                id=window_id,
                scenario=scenario,
                recording_group=group,
                rate=rate,
                samples=tuple(s for _, s in pairs),
                label=label,
            )
        )
    return windows


def downsample(w: TrajectoryWindow, target_rate: float) -> TrajectoryWindow:
    """Mean-pooling decimation to ``target_rate``.

    Source samples are grouped into buckets of ``round(rate/target_rate)``
    consecutive samples; each output sample is the per-channel mean of
    its bucket, re-timestamped on the uniform target grid. A trailing
    partial bucket is dropped.
    """
    if target_rate <= 0 or target_rate > w.rate:
        raise DataError(
            f"target rate {target_rate} must be in (0, {w.rate}] for window {w.id!r}"
        )
    bucket = max(1, round(w.rate / target_rate))
    n_out = len(w.samples) // bucket
    if n_out < 2:
        raise DataError(
            f"window {w.id!r} too short to downsample to {target_rate} Hz"
        )
    data = w.to_array()[: n_out * bucket]
    pooled = data.reshape(n_out, bucket, 9).mean(axis=1)
    samples = tuple(
        ImuSample(
            t=i / target_rate,
            accel=tuple(pooled[i, 0:3]),
            gyro=tuple(pooled[i, 3:6]),
            mag=tuple(pooled[i, 6:9]),
        )
        for i in range(n_out)
    )
    return TrajectoryWindow(
        id=w.id,
        scenario=w.scenario,
        recording_group=w.recording_group,
        rate=float(target_rate),
        samples=samples,
        label=w.label,
    )


def slice_windows(
    recording: TrajectoryWindow, duration: float, stride: float
) -> list[TrajectoryWindow]:
    """Cut a long recording into fixed-length, possibly overlapping windows.

    Each output has exactly ``floor(duration * rate)`` samples with
    timestamps rebased to zero; the trailing remainder is dropped. A
    recording shorter than one window yields an empty list.
    """
    if duration <= 0 or stride <= 0:
        raise DataError("duration and stride must be positive")
    wlen = int(duration * recording.rate)
    if wlen < 2:
        raise DataError(f"duration {duration}s is under 2 samples at {recording.rate} Hz")
    step = max(1, round(stride * recording.rate))
    n = len(recording.samples)
    out = []
    for k, start in enumerate(range(0, n - wlen + 1, step)):
        chunk = recording.samples[start : start + wlen]
        samples = tuple(
            ImuSample(t=j / recording.rate, accel=s.accel, gyro=s.gyro, mag=s.mag)
            for j, s in enumerate(chunk)
        )
        out.append(
            TrajectoryWindow(
                id=f"{recording.id}#{k:03d}",
                scenario=recording.scenario,
                recording_group=recording.recording_group,
                rate=recording.rate,
                samples=samples,
                label=recording.label,
            )
        )
    return out


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Split ``total`` into integers proportional to ``weights``.

    Each result is the floor or ceiling of its exact share; remainders
    go to the largest fractional parts, ties broken by position.
    """
    weight_sum = sum(weights)
    exact = [total * w / weight_sum for w in weights]
    base = [int(math.floor(e)) for e in exact]
    remainder = total - sum(base)
    fractions = sorted(
        range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i)
    )
    for i in fractions[:remainder]:
        base[i] += 1
    return base


def split_dataset(windows: Sequence[TrajectoryWindow], seed: int) -> SplitAssignment:
    """Deterministic 3:1:1:1 split with whole recording groups held out as
    the unseen test set.

    Unseen groups are drawn per scenario so every scenario contributes
    unseen windows; the remaining windows are shuffled globally and cut
    into train/validation/seen-test by largest-remainder allocation,
    nudged so every part lands within one window of its exact share.
    """
    n = len(windows)
    if n < 6:
        raise DataError(f"need at least 6 windows to split, got {n}")
    ids = [w.id for w in windows]
    if len(set(ids)) != n:
        raise DataError("duplicate window ids in dataset")

    rng = np.random.default_rng(seed)
    by_scenario: dict[Scenario, dict[str, list[str]]] = {}
    for w in windows:
        by_scenario.setdefault(w.scenario, {}).setdefault(w.recording_group, []).append(w.id)
    for scenario, groups in by_scenario.items():
        if len(groups) < 2:
            raise DataError(
                f"scenario {scenario.value!r} has {len(groups)} recording group(s); "
                "at least 2 are needed so one can be held out unseen"
            )

    scenarios = sorted(by_scenario, key=lambda s: s.value)

    # Each scenario aims for its proportional share of the unseen sixth.
    # The carry folds earlier scenarios' rounding into later targets so
    # per-scenario deviations cancel instead of accumulating.
    unseen_ids: list[str] = []
    carry = 0.0
    for scenario in scenarios:
        groups = by_scenario[scenario]
        exact_share = sum(len(v) for v in groups.values()) / 6.0
        target = exact_share - carry
        names = sorted(groups)
        shuffled = [names[i] for i in rng.permutation(len(names))]
        selected: list[str] = []
        total = 0
        for name in shuffled:
            if total >= target:
                break
            size = len(groups[name])
            if total + size <= target + 1:
                selected.append(name)
                total += size
        if total < target - 1:
            raise DataError(
                f"cannot hold out whole recording groups totalling ~{target:.1f} "
                f"windows in scenario {scenario.value!r}; add more or smaller groups"
            )
        if len(selected) >= len(names):
            raise DataError(
                f"scenario {scenario.value!r} would have every group held out; "
                "add more recording groups"
            )
        carry += total - exact_share
        for name in selected:
            unseen_ids.extend(groups[name])

    if abs(len(unseen_ids) - n / 6) > 1:
        raise DataError(
            "whole-group holdout cannot land within one window of the unseen "
            "share; adjust group sizes or counts"
        )

    unseen_set = set(unseen_ids)
    rest = sorted(wid for wid in ids if wid not in unseen_set)
    rest = [rest[i] for i in rng.permutation(len(rest))]

    alloc = largest_remainder(len(rest), [3, 1, 1])
    exact = [n * 3 / 6, n / 6, n / 6]
    # Nudge so each part is within one window of its exact global share.
    for _ in range(2 * n):
        deviations = [alloc[i] - exact[i] for i in range(3)]
        hi = max(range(3), key=lambda i: deviations[i])
        lo = min(range(3), key=lambda i: deviations[i])
        if (deviations[hi] <= 1 and deviations[lo] >= -1) or hi == lo:
            break
        alloc[hi] -= 1
        alloc[lo] += 1

    assignment: dict[str, Part] = {wid: Part.UNSEEN_TEST for wid in unseen_ids}
    cursor = 0
    for part, count in zip((Part.TRAIN, Part.VALIDATION, Part.SEEN_TEST), alloc):
        for wid in rest[cursor : cursor + count]:
            assignment[wid] = part
        cursor += count

    split = SplitAssignment(assignment)
    split.validate(windows)
    return split
