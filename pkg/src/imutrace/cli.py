"""Command-line orchestrator: generate, split, train, run, report.

One executable with subcommands. Every subcommand accepts ``--config
FILE`` (a JSON object of flag defaults, keyed by flag dest names);
precedence is built-in defaults, then config file, then explicit
flags. Exit codes: 0 success, 2 configuration problems (including bad
flags), 3 data problems, 4 transport problems, 5 internal errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .core import (
    Part,
    Scenario,
    SplitAssignment,
    dataset_hash,
    downsample,
    ingest_csv,
    serialize_csv,
    split_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    ImutraceError,
    ProviderError,
    TransportError,
)
from .evalreport import (
    BASELINE_KINDS,
    DEFAULT_TARGET_RATE_HZ,
    parse_report_jsonl,
    render_report,
    run_experiment,
)
from .llm import ProviderConfig
from .prompting import PromptMode, TemplateSet
from .synth import (
    GeneratorConfig,
    ZERO_NOISE,
    generate_dataset,
    uniform_counts,
)
from .baselines.features import feature_matrix, label_vector
from .baselines.forest import RfConfig, train_rf
from .baselines.model_io import save_model, save_training_log
from .baselines.nn import CnnConfig, LstmConfig, train_cnn, train_lstm
from .baselines.svm import SvmConfig, train_svm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4
EXIT_INTERNAL = 5


def _write_json(obj: dict, path: Path) -> None:
    path.write_text(
        json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def _load_windows(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return ingest_csv(fh)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}")


def _load_split(path: str) -> SplitAssignment:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read split file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"split file {path} is not valid JSON: {exc}")
    if not isinstance(obj, dict) or "assignment" not in obj:
        raise DataError(f"split file {path} must carry an 'assignment' object")
    return SplitAssignment.from_json_dict(obj["assignment"])


def _noise_mapping(name: str):
    if name == "default":
        return None  # per-scenario defaults
    if name == "zero":
        return {scenario: ZERO_NOISE for scenario in Scenario}
    raise ConfigError(f"unknown noise profile {name!r}")


def _parse_modes(text: str) -> list[PromptMode]:
    if text.strip().lower() in ("", "none"):
        return []
    modes = []
    for token in text.split(","):
        token = token.strip().lower()
        if token == "cot":
            modes.append(PromptMode.COT)
        elif token == "do":
            modes.append(PromptMode.DO)
        else:
            raise ConfigError(f"unknown prompt mode {token!r}, expected cot or do")
    return modes


def _parse_baselines(text: str) -> list[str]:
    if text.strip().lower() in ("", "none"):
        return []
    kinds = []
    for token in text.split(","):
        token = token.strip().lower()
        if token not in BASELINE_KINDS:
            raise ConfigError(
                f"unknown baseline {token!r}, expected one of {', '.join(BASELINE_KINDS)}"
            )
        kinds.append(token)
    return kinds


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = GeneratorConfig(
        seed=args.seed,
        rate=args.rate,
        duration=args.duration,
        windows_per_group=args.windows_per_group,
    )
    counts = uniform_counts(args.per_class)
    windows, manifest = generate_dataset(cfg, counts, _noise_mapping(args.noise))
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "dataset.csv").write_text(serialize_csv(windows), encoding="utf-8")
        manifest = dict(manifest)
        manifest["dataset_sha256"] = dataset_hash(windows)
        _write_json(manifest, out / "manifest.json")
    except OSError as exc:
        raise ConfigError(f"cannot write to output directory {out}: {exc}")
    if not windows:
        print("warning: generated an empty dataset (per-class 0)", file=sys.stderr)
    print(f"wrote {len(windows)} windows to {out / 'dataset.csv'}")
    per_scenario = {s.value: sum(1 for w in windows if w.scenario is s) for s in Scenario}
    print(f"per scenario: {per_scenario}")
    return EXIT_OK


def cmd_split(args) -> int:
    windows = _load_windows(args.data)
    split = split_dataset(windows, args.seed)
    obj = {"seed": args.seed, "assignment": split.to_json_dict()}
    try:
        _write_json(obj, Path(args.out))
    except OSError as exc:
        raise ConfigError(f"cannot write split file {args.out}: {exc}")
    counts = {part.value: n for part, n in split.counts().items()}
    print(f"wrote split of {len(windows)} windows to {args.out}")
    print(f"counts: {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    windows = _load_windows(args.data)
    split = _load_split(args.split)
    split.validate(windows)
    scenario = Scenario.from_string(args.scenario)
    train_ids = set(split.part_ids(Part.TRAIN))
    train_windows = [w for w in windows if w.id in train_ids and w.scenario is scenario]
    if not train_windows:
        raise DataError(f"no training windows for scenario {scenario.value!r}")

    if args.model == "rf":
        model = train_rf(
            feature_matrix(train_windows),
            label_vector(train_windows),
            RfConfig(seed=args.seed),
        )
    elif args.model == "svm":
        model = train_svm(
            feature_matrix(train_windows), label_vector(train_windows), SvmConfig()
        )
    else:
        down = [downsample(w, args.target_rate) for w in train_windows]
        if args.model == "cnn":
            cfg = CnnConfig(seed=args.seed) if args.epochs is None else CnnConfig(
                seed=args.seed, epochs=args.epochs
            )
            model = train_cnn(down, cfg)
        else:
            cfg = LstmConfig(seed=args.seed) if args.epochs is None else LstmConfig(
                seed=args.seed, epochs=args.epochs
            )
            model = train_lstm(down, cfg)

    try:
        save_model(model, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write model file {args.out}: {exc}")
    if args.log is not None:
        if hasattr(model, "history"):
            save_training_log(model.history, args.log)
        else:
            print(
                f"note: {args.model} has no per-epoch history, no log written",
                file=sys.stderr,
            )
    summary = {
        key: model.manifest[key]
        for key in ("train_accuracy", "oob_accuracy", "final_loss")
        if key in model.manifest
    }
    print(
        f"trained {args.model} on {len(train_windows)} {scenario.value} windows: {summary}"
    )
    print(f"wrote model to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    if (args.data is None) == (args.per_class is None):
        raise ConfigError(
            "exactly one data source: pass --data CSV or --per-class N (generator)"
        )

    # vet all flag-level configuration before touching any data
    provider_cfg = None
    modes = _parse_modes(args.modes)
    if args.providers == "none":
        modes = []
    elif args.providers == "live":
        if not args.endpoint or not args.model:
            raise ConfigError("--providers live requires --endpoint and --model")
        provider_cfg = ProviderConfig(
            endpoint=args.endpoint,
            model=args.model,
            token_env=args.token_env,
            temperature=args.temperature,
            max_tokens=args.max_tokens,
            timeout_s=args.timeout,
            retries=args.retries,
            backoff_base_s=args.backoff,
            concurrency=args.concurrency,
        )
    baselines = _parse_baselines(args.baselines)
    templates = None
    if args.template is not None:
        templates = TemplateSet.from_dir(args.template)

    manifest_extra: dict = {"baseline_seed": args.seed}
    generated = None
    if args.data is not None:
        windows = _load_windows(args.data)
        manifest_extra["data_source"] = {"kind": "file", "path": args.data}
    else:
        gen_cfg = GeneratorConfig(
            seed=args.gen_seed,
            rate=args.rate,
            duration=args.duration,
            windows_per_group=args.windows_per_group,
        )
        windows, generated = generate_dataset(
            gen_cfg, uniform_counts(args.per_class), _noise_mapping(args.noise)
        )
        manifest_extra["data_source"] = {"kind": "generated", "generator": generated}
    if not windows:
        raise DataError("the dataset is empty; nothing to evaluate")

    if args.split is not None:
        split = _load_split(args.split)
    else:
        split = split_dataset(windows, args.split_seed)
        manifest_extra["split_seed"] = args.split_seed

    out = Path(args.out)
    transcript_path = out / "transcript.jsonl" if args.transcript else None
    try:
        out.mkdir(parents=True, exist_ok=True)
        if transcript_path is not None and transcript_path.exists():
            transcript_path.unlink()
    except OSError as exc:
        raise ConfigError(f"cannot prepare output directory {out}: {exc}")

    report = run_experiment(
        windows,
        split,
        baselines=baselines,
        modes=modes,
        provider_cfg=provider_cfg,
        rf_cfg=RfConfig(seed=args.seed),
        cnn_cfg=CnnConfig(seed=args.seed),
        lstm_cfg=LstmConfig(seed=args.seed),
        target_rate_hz=args.target_rate,
        templates=templates,
        manifest_extra=manifest_extra,
        transcript_path=transcript_path,
    )

    try:
        if generated is not None:
            (out / "dataset.csv").write_text(serialize_csv(windows), encoding="utf-8")
        _write_json(
            {"seed": args.split_seed, "assignment": split.to_json_dict()},
            out / "split.json",
        )
        _write_json(report.manifest, out / "run_manifest.json")
        (out / "report.txt").write_text(render_report(report, "text"), encoding="utf-8")
        (out / "report.jsonl").write_text(
            render_report(report, "jsonl"), encoding="utf-8"
        )
    except OSError as exc:
        raise ConfigError(f"cannot write run outputs to {out}: {exc}")

    print(render_report(report, "text"), end="")
    print(f"wrote report to {out}")

    transport_skips = [
        cell for cell in report.cells.values()
        if cell.skipped and "provider calls failed" in (cell.skipped_reason or "")
    ]
    if transport_skips:
        print(
            f"warning: {len(transport_skips)} cell(s) skipped on provider failures",
            file=sys.stderr,
        )
        return EXIT_TRANSPORT
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = Path(args.input).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read report {args.input}: {exc}")
    report = parse_report_jsonl(text)
    rendered = render_report(report, args.format)
    if args.out is not None:
        try:
            Path(args.out).write_text(rendered, encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot write report {args.out}: {exc}")
        print(f"wrote {args.format} report to {args.out}")
    else:
        print(rendered, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="imutrace",
        description="Synthetic IMU trajectory recognition testbed.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(
            name,
            help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        p.add_argument(
            "--config",
            default=None,
            help="JSON file of flag defaults (dest names); explicit flags override",
        )
        subparsers[name] = p
        return p

    g = add("generate", "synthesize a labeled dataset")
    g.add_argument("--out", default="dataset", help="output directory")
    g.add_argument("--per-class", type=int, default=10, help="windows per (label, scenario)")
    g.add_argument("--seed", type=int, default=0, help="generator seed")
    g.add_argument("--rate", type=float, default=100.0, help="sample rate, Hz")
    g.add_argument("--duration", type=float, default=10.0, help="window length, s")
    g.add_argument("--windows-per-group", type=int, default=4, help="windows per recording group")
    g.add_argument("--noise", choices=["default", "zero"], default="default", help="noise profiles")
    g.set_defaults(func=cmd_generate)

    s = add("split", "assign windows to train/validation/seen/unseen parts")
    s.add_argument("--data", required=True, help="dataset CSV")
    s.add_argument("--seed", type=int, default=0, help="split seed")
    s.add_argument("--out", default="split.json", help="output split file")
    s.set_defaults(func=cmd_split)

    t = add("train", "train one baseline on the Train part of one scenario")
    t.add_argument("--data", required=True, help="dataset CSV")
    t.add_argument("--split", required=True, help="split JSON from the split command")
    t.add_argument("--model", choices=list(BASELINE_KINDS), required=True, help="baseline kind")
    t.add_argument("--scenario", choices=[s.value for s in Scenario], default="indoor")
    t.add_argument("--out", default="model.json", help="output model file")
    t.add_argument("--log", default=None, help="per-epoch CSV log (neural nets)")
    t.add_argument("--seed", type=int, default=0, help="training seed")
    t.add_argument("--epochs", type=int, default=None, help="override epochs (neural nets)")
    t.add_argument(
        "--target-rate",
        type=float,
        default=DEFAULT_TARGET_RATE_HZ,
        help="downsampled rate for neural-net inputs, Hz",
    )
    t.set_defaults(func=cmd_train)

    r = add("run", "train baselines, run prompt modes, write reports")
    r.add_argument("--data", default=None, help="dataset CSV (or use --per-class)")
    r.add_argument("--split", default=None, help="split JSON; computed when omitted")
    r.add_argument("--split-seed", type=int, default=0, help="seed when computing the split")
    r.add_argument("--per-class", type=int, default=None, help="generate N windows per (label, scenario)")
    r.add_argument("--gen-seed", type=int, default=0, help="generator seed")
    r.add_argument("--rate", type=float, default=100.0, help="generator sample rate, Hz")
    r.add_argument("--duration", type=float, default=10.0, help="generator window length, s")
    r.add_argument("--windows-per-group", type=int, default=4, help="generator windows per group")
    r.add_argument("--noise", choices=["default", "zero"], default="default", help="generator noise")
    r.add_argument("--out", default="run", help="output directory")
    r.add_argument("--providers", choices=["mock", "live", "none"], default="mock")
    r.add_argument("--modes", default="cot,do", help="comma list of prompt modes (cot, do) or none")
    r.add_argument(
        "--baselines",
        default=",".join(BASELINE_KINDS),
        help="comma list of baselines or none",
    )
    r.add_argument("--seed", type=int, default=0, help="baseline training seed")
    r.add_argument(
        "--target-rate",
        type=float,
        default=DEFAULT_TARGET_RATE_HZ,
        help="downsampled rate fed to prompts and neural nets, Hz",
    )
    r.add_argument("--template", default=None, help="directory overriding the prompt templates")
    r.add_argument("--transcript", action="store_true", help="write transcript.jsonl of provider calls")
    r.add_argument("--endpoint", default=None, help="live provider: chat-completion URL")
    r.add_argument("--model", default=None, help="live provider: model id")
    r.add_argument("--token-env", default="IMUTRACE_API_TOKEN", help="live provider: auth token env var")
    r.add_argument("--temperature", type=float, default=0.0, help="live provider: temperature")
    r.add_argument("--max-tokens", type=int, default=1024, help="live provider: response token cap")
    r.add_argument("--timeout", type=float, default=30.0, help="live provider: request timeout, s")
    r.add_argument("--retries", type=int, default=3, help="live provider: max retries")
    r.add_argument("--backoff", type=float, default=0.5, help="live provider: backoff base, s")
    r.add_argument("--concurrency", type=int, default=4, help="live provider: concurrent requests")
    r.set_defaults(func=cmd_run)

    p = add("report", "re-render a JSONL report")
    p.add_argument("--input", required=True, help="report.jsonl path")
    p.add_argument("--format", choices=["text", "jsonl"], default="text")
    p.add_argument("--out", default=None, help="output file; stdout when omitted")
    p.set_defaults(func=cmd_report)

    return parser, subparsers


def _apply_config_file(
    parser: argparse.ArgumentParser,
    subparsers: dict[str, argparse.ArgumentParser],
    argv: list[str],
) -> argparse.Namespace:
    probe, _ = parser.parse_known_args(argv)
    config_path = getattr(probe, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        sub = subparsers[probe.command]
        known = {action.dest for action in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ConfigError(
                f"config file {config_path} sets unknown keys for "
                f"{probe.command!r}: {', '.join(unknown)}"
            )
        sub.set_defaults(**config)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser, subparsers = build_parser()
    try:
        args = _apply_config_file(parser, subparsers, list(argv))
        return args.func(args)
    except ConfigError as exc:
        print(f"imutrace: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"imutrace: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TransportError, ProviderError) as exc:
        print(f"imutrace: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ImutraceError as exc:
        print(f"imutrace: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
