import hashlib
import shutil
from pathlib import Path

import numpy as np
import pytest

from imutrace.core import AXIS_NAMES, Scenario, TrajectoryLabel, downsample
from imutrace.errors import ConfigError
from imutrace.prompting import (
    COT_CLOSER,
    DEFAULT_MAX_CHARS,
    DO_CLOSER,
    PromptBundle,
    PromptMode,
    SerializationOptions,
    TemplateSet,
    build_prompt,
    candidate_label_list,
    serialize_window,
    validate_bundle,
)
from imutrace.synth import GeneratorConfig, ZERO_NOISE, generate_dataset, uniform_counts

from conftest import window_from_array

TEMPLATE_DIR = Path(__file__).resolve().parents[1] / "src" / "imutrace" / "templates"


def test_serialize_window_exact_lines(make_window):
    data = np.zeros((2, 9))
    data[0] = [1.0, -2.5, 0.1, 0.0, 3.0, -0.75, 30.0, 0.0, 40.0]
    data[1] = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]
    w = make_window(data, rate=10.0)
    text = serialize_window(w, SerializationOptions(channel_labels=False))
    assert text == (
        "1.00, -2.50, 0.10, 0.00, 3.00, -0.75, 30.00, 0.00, 40.00\n"
        "0.50, 0.50, 0.50, 0.50, 0.50, 0.50, 0.50, 0.50, 0.50"
    )


def test_serialize_window_header_and_decimals(make_window):
    w = make_window(np.full((2, 9), 0.125), rate=10.0)
    text = serialize_window(w, SerializationOptions(decimals=3))
    lines = text.split("\n")
    assert lines[0] == ", ".join(AXIS_NAMES)
    assert lines[1] == ", ".join(["0.125"] * 9)
    assert len(lines) == 3


def test_serialize_window_axis_permutation(make_window):
    data = np.zeros((2, 9))
    data[:, 0] = 1.0   # ax
    data[:, 5] = 2.0   # gz
    w = make_window(data, rate=10.0)
    order = ("gz", "ax", "ay", "az", "gx", "gy", "mx", "my", "mz")
    text = serialize_window(
        w, SerializationOptions(axis_order=order, channel_labels=False)
    )
    assert text.split("\n")[0].startswith("2.00, 1.00, 0.00")


def test_serialization_options_validation():
    with pytest.raises(ConfigError):
        SerializationOptions(decimals=10)
    with pytest.raises(ConfigError):
        SerializationOptions(axis_order=("ax",) * 9)


def test_build_prompt_substitutes_everything(make_window):
    w = make_window(np.zeros((30, 9)), rate=3.0, window_id="probe")
    bundle = build_prompt(w, PromptMode.COT)
    assert bundle.window_id == "probe"
    assert bundle.mode is PromptMode.COT
    assert "downsampled to 3 Hz" in bundle.question
    assert "at 100 Hz" in bundle.question
    assert candidate_label_list() in bundle.question
    assert "{{" not in bundle.text
    # 30 data lines plus the channel-label header
    data_lines = [
        line for line in bundle.question.split("\n") if line.count(",") == 8
    ]
    assert len(data_lines) == 31


def test_prompt_modes_have_their_closers(make_window):
    w = make_window(np.zeros((30, 9)), rate=3.0)
    cot = build_prompt(w, PromptMode.COT)
    do = build_prompt(w, PromptMode.DO)
    assert cot.text.rstrip().endswith(COT_CLOSER)
    assert DO_CLOSER in do.text
    assert COT_CLOSER not in do.text
    assert do.text != cot.text


def test_prompt_mentions_each_label_exactly_once(make_window):
    w = make_window(np.zeros((30, 9)), rate=3.0)
    for mode in PromptMode:
        text = build_prompt(w, mode).text.lower()
        for label in TrajectoryLabel:
            assert text.count(label.value) == 1, label


def test_prompt_determinism_and_digest(make_window):
    w = make_window(np.arange(30 * 9, dtype=float).reshape(30, 9) / 100.0, rate=3.0)
    a = build_prompt(w, PromptMode.COT)
    b = build_prompt(w, PromptMode.COT)
    assert a.text == b.text
    assert a.digest() == b.digest()
    expected = hashlib.sha256(
        a.instruction.encode("utf-8") + b"\x00" + a.question.encode("utf-8")
    ).hexdigest()
    assert a.digest() == expected
    other = make_window(np.zeros((30, 9)), rate=3.0)
    assert build_prompt(other, PromptMode.COT).digest() != a.digest()


def test_default_budget_fits_30_sample_windows():
    # property: at default settings, every 30-sample prompt stays under
    # the 4,000-character budget, with real synthesized data
    windows, _ = generate_dataset(
        GeneratorConfig(seed=13), uniform_counts(2), None
    )
    assert DEFAULT_MAX_CHARS == 4000
    for w in windows:
        d = downsample(w, 3.0)
        assert len(d) == 30
        for mode in PromptMode:
            bundle = build_prompt(d, mode)
            assert len(bundle.text) < 4000


def test_over_budget_raises(make_window):
    w = make_window(np.zeros((1000, 9)), rate=100.0)
    with pytest.raises(ConfigError):
        build_prompt(w, PromptMode.COT)
    bundle = build_prompt(w, PromptMode.COT, max_chars=100_000)
    assert len(bundle.text) > 4000


def test_template_set_from_dir(tmp_path, make_window):
    for name in ("instruction.txt", "question_cot.txt", "question_do.txt"):
        shutil.copy(TEMPLATE_DIR / name, tmp_path / name)
    custom = TemplateSet.from_dir(tmp_path)
    assert custom.digest() == TemplateSet.load_default().digest()

    text = (tmp_path / "question_cot.txt").read_text(encoding="utf-8")
    (tmp_path / "question_cot.txt").write_text(
        text.replace("wheeled robot", "delivery cart"), encoding="utf-8"
    )
    changed = TemplateSet.from_dir(tmp_path)
    assert changed.digest() != custom.digest()
    w = make_window(np.zeros((30, 9)), rate=3.0)
    assert "delivery cart" in build_prompt(w, PromptMode.COT, templates=changed).text

    (tmp_path / "question_do.txt").unlink()
    with pytest.raises(ConfigError):
        TemplateSet.from_dir(tmp_path)


def test_unknown_placeholder_rejected(tmp_path, make_window):
    for name in ("instruction.txt", "question_cot.txt", "question_do.txt"):
        shutil.copy(TEMPLATE_DIR / name, tmp_path / name)
    bad = (tmp_path / "question_do.txt").read_text(encoding="utf-8")
    (tmp_path / "question_do.txt").write_text(
        bad.replace("{{data}}", "{{datum}}"), encoding="utf-8"
    )
    templates = TemplateSet.from_dir(tmp_path)
    w = make_window(np.zeros((30, 9)), rate=3.0)
    with pytest.raises(ConfigError):
        build_prompt(w, PromptMode.DO, templates=templates)


def test_validate_bundle_rejections():
    question = (
        f"The candidate trajectories are {candidate_label_list()}. {COT_CLOSER}"
    )
    good = PromptBundle(
        instruction="inst", question=question, mode=PromptMode.COT, window_id="w"
    )
    validate_bundle(good)

    missing_label = PromptBundle(
        instruction="inst",
        question=f"Only 'straight' here. {COT_CLOSER}",
        mode=PromptMode.COT,
        window_id="w",
    )
    with pytest.raises(ConfigError):
        validate_bundle(missing_label)

    twice = PromptBundle(
        instruction="inst",
        question=f"{candidate_label_list()} and again straight. {COT_CLOSER}",
        mode=PromptMode.COT,
        window_id="w",
    )
    with pytest.raises(ConfigError):
        validate_bundle(twice)

    no_closer = PromptBundle(
        instruction="inst",
        question=f"The candidate trajectories are {candidate_label_list()}.",
        mode=PromptMode.COT,
        window_id="w",
    )
    with pytest.raises(ConfigError):
        validate_bundle(no_closer)


def test_templates_keep_label_words_out_of_prose():
    # labels must reach the prompt only through the {{labels}} slot,
    # otherwise the exactly-once check cannot hold
    for name in ("instruction.txt", "question_cot.txt", "question_do.txt"):
        text = (TEMPLATE_DIR / name).read_text(encoding="utf-8").lower()
        for label in TrajectoryLabel:
            assert label.value not in text
