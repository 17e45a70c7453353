"""Command line front door.

Subcommands mirror the pipeline stages: embed, split, train, eval, run,
report, tsne. Every subcommand accepts --config pointing at a JSON file of
option defaults (for `run`, the full experiment document); explicit flags
win over config values. Exit codes: 0 success, 1 invalid input, 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from .audio import decode_wav
from .dataset import SplitSpec, kshot_split, load_manifest
from .embedding import (
    PROVIDER_PRESETS,
    ExternalEmbedder,
    ProviderSpec,
    ReferenceEmbedder,
    embed_dataset,
    read_table,
    reference_provider_spec,
    write_table,
)
from .metrics import metrics_report
from .probe import ProbeConfig, ProbeModel, predict_scores, train_probe
from .projection import TsneConfig, emit_scatter, tsne
from .report import render_results_table, render_shots_curve
from .runner import ExperimentConfig, load_results_log, run_experiment, summarize_run


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse wants to exit(2) on bad flags; the contract here is exit 1
    # with usage text, so route through an exception instead.
    def error(self, message: str) -> None:
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="probebench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("embed", parents=[], help="embed a dataset into a table file")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--provider", help="preset name or 'reference'")
    p.add_argument("--spec", help="JSON file holding a full provider spec")
    p.add_argument("--command", help="external embedder command line")
    p.add_argument("--resample-mode", choices=("resample", "reinterpret"))
    common(p)
    p.set_defaults(handler=_cmd_embed)

    p = sub.add_parser("split", help="draw a k-shot split from a manifest")
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--k", type=int, help="train examples per class")
    p.add_argument("--grouped", action=argparse.BooleanOptionalAction,
                   help="keep source recordings on one side of the split")
    common(p)
    p.set_defaults(handler=_cmd_split)

    p = sub.add_parser("train", help="train a probe on a split")
    p.add_argument("--table", help="embedding table file")
    p.add_argument("--split", help="split JSON file")
    p.add_argument("--probe", choices=("linear", "two_layer"))
    p.add_argument("--loss", choices=("bce", "cce"))
    common(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="score a trained probe on its eval set")
    p.add_argument("--table", help="embedding table file")
    p.add_argument("--split", help="split JSON file")
    p.add_argument("--model", help="trained probe JSON file")
    p.add_argument("--manifest", help="dataset manifest CSV (true labels)")
    common(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("run", help="run a full experiment grid")
    common(p)
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("report", help="render tables and curves from a results log")
    p.add_argument("--log", help="results log (newline-delimited JSON)")
    p.add_argument("--group-by", help="comma-separated grouping fields (default dataset,k)")
    common(p)
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("tsne", help="project a table to a 2-d scatter")
    p.add_argument("--table", help="embedding table file")
    p.add_argument("--manifest", help="dataset manifest CSV (class colors)")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    common(p)
    p.set_defaults(handler=_cmd_tsne)
    return parser


def _load_config(args: argparse.Namespace) -> dict:
    if not getattr(args, "config", None):
        return {}
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(payload, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return payload


def _opt(args: argparse.Namespace, config: dict, name: str, default=None, required=False):
    value = getattr(args, name, None)
    if value is None:
        value = config.get(name, default)
    if value is None and required:
        raise UsageError(f"missing required option --{name.replace('_', '-')}")
    return value


def _require_file(path_text: str, what: str) -> Path:
    path = Path(path_text)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _cmd_embed(args: argparse.Namespace) -> int:
    config = _load_config(args)
    manifest_path = _require_file(_opt(args, config, "manifest", required=True), "manifest")
    out = _opt(args, config, "out", required=True)
    provider = _opt(args, config, "provider", default="reference")
    mode = _opt(args, config, "resample_mode")
    spec_path = _opt(args, config, "spec")
    if spec_path is not None:
        spec = ProviderSpec.from_dict(
            json.loads(_require_file(spec_path, "spec file").read_text(encoding="utf-8"))
        )
    elif provider == "reference":
        spec = reference_provider_spec()
    elif provider in PROVIDER_PRESETS:
        spec = PROVIDER_PRESETS[provider]
    else:
        raise UsageError(
            f"unknown provider {provider!r}; presets: {sorted(PROVIDER_PRESETS)} or 'reference'"
        )
    if mode is not None:
        spec = replace(spec, resample_mode=mode)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    clips = {}
    for record in manifest.records:
        audio = Path(record.audio_path)
        if not audio.is_absolute():
            audio = base / audio
        clips[record.example_id] = decode_wav(_require_file(audio, "audio file").read_bytes())
    command = _opt(args, config, "command")
    if command is not None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        with ExternalEmbedder(argv) as embedder:
            table = embed_dataset(embedder, spec, clips)
    else:
        table = embed_dataset(ReferenceEmbedder(), spec, clips)
    write_table(table, out)
    print(f"wrote {len(table)} x {table.dim} table to {out}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    config = _load_config(args)
    manifest_path = _require_file(_opt(args, config, "manifest", required=True), "manifest")
    k = int(_opt(args, config, "k", required=True))
    seed = int(_opt(args, config, "seed", default=101))
    grouped = bool(_opt(args, config, "grouped", default=False))
    out = _opt(args, config, "out", required=True)
    manifest = load_manifest(manifest_path)
    split = kshot_split(manifest, k, seed, group_by_recording=grouped)
    Path(out).write_text(split.to_json() + "\n", encoding="utf-8")
    print(
        f"wrote split k={k} seed={seed}: {len(split.all_train_ids())} train, "
        f"{len(split.eval_ids)} eval to {out}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    table_path = _require_file(_opt(args, config, "table", required=True), "table")
    split_path = _require_file(_opt(args, config, "split", required=True), "split")
    out = _opt(args, config, "out", required=True)
    probe_payload = dict(config.get("probe_config", {}))
    kind = _opt(args, config, "probe")
    loss = _opt(args, config, "loss")
    seed = getattr(args, "seed", None)
    if kind is not None:
        probe_payload["kind"] = kind
    if loss is not None:
        probe_payload["loss"] = loss
    if seed is not None:
        probe_payload["init_seed"] = int(seed)
    probe_config = ProbeConfig.from_dict(probe_payload)
    table = read_table(table_path)
    split = SplitSpec.from_json(split_path.read_text(encoding="utf-8"))
    model = train_probe(table, split, probe_config)
    Path(out).write_text(model.to_json() + "\n", encoding="utf-8")
    print(f"wrote {model.kind}/{model.loss} probe over {model.n_classes()} classes to {out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    table_path = _require_file(_opt(args, config, "table", required=True), "table")
    split_path = _require_file(_opt(args, config, "split", required=True), "split")
    model_path = _require_file(_opt(args, config, "model", required=True), "model")
    manifest_path = _require_file(_opt(args, config, "manifest", required=True), "manifest")
    out = _opt(args, config, "out")
    table = read_table(table_path)
    split = SplitSpec.from_json(split_path.read_text(encoding="utf-8"))
    model = ProbeModel.from_json(model_path.read_text(encoding="utf-8"))
    manifest = load_manifest(manifest_path)
    ids = list(split.eval_ids)
    scores = predict_scores(model, table, ids)
    report = metrics_report(scores, manifest.labels_for(ids), model.class_names)
    if out is not None:
        Path(out).write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"n_eval={report.n_eval} top1={report.top1:.4f} macro_auc={report.macro_auc:.4f}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    if not getattr(args, "config", None):
        raise UsageError("run needs --config pointing at an experiment JSON file")
    experiment = ExperimentConfig.from_json_file(args.config)
    if getattr(args, "out", None):
        experiment = replace(experiment, outputs=args.out)
    if getattr(args, "seed", None) is not None:
        experiment = replace(experiment, seeds=(int(args.seed),))
    for manifest_path in experiment.datasets:
        _require_file(manifest_path, "manifest")
    records = run_experiment(experiment)
    print(summarize_run(records))
    print(f"results log: {Path(experiment.outputs) / 'results.ndjson'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    log_path = _require_file(_opt(args, config, "log", required=True), "results log")
    out = Path(_opt(args, config, "out", default="."))
    group_by = _opt(args, config, "group_by", default="dataset,k")
    if isinstance(group_by, str):
        group_by = tuple(f.strip() for f in group_by.split(",") if f.strip())
    records = load_results_log(log_path)
    if not records:
        print("no records", file=sys.stderr)
        return 1
    table = render_results_table(records, group_by=group_by)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results-table.txt").write_text(table.text, encoding="utf-8")
    (out / "results-table.csv").write_text(table.csv, encoding="utf-8")
    written = [out / "results-table.txt", out / "results-table.csv"]
    try:
        written.extend(render_shots_curve(records, out))
    except ValueError as exc:
        print(f"skipping shot curves: {exc}", file=sys.stderr)
    print(table.text, end="")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_tsne(args: argparse.Namespace) -> int:
    config = _load_config(args)
    table_path = _require_file(_opt(args, config, "table", required=True), "table")
    manifest_path = _require_file(_opt(args, config, "manifest", required=True), "manifest")
    out = _opt(args, config, "out", default="tsne-scatter")
    overrides = {}
    perplexity = _opt(args, config, "perplexity")
    iterations = _opt(args, config, "iterations")
    seed = _opt(args, config, "seed")
    if perplexity is not None:
        overrides["perplexity"] = float(perplexity)
    if iterations is not None:
        overrides["iterations"] = int(iterations)
    if seed is not None:
        overrides["seed"] = int(seed)
    tsne_config = TsneConfig(**overrides)
    table = read_table(table_path)
    manifest = load_manifest(manifest_path)
    labels = {record.example_id: record.label for record in manifest.records}
    points = tsne(table, labels, tsne_config)
    out = Path(out)
    svg = emit_scatter(points, out.with_suffix(".svg"), format="svg")
    csv = emit_scatter(points, out.with_suffix(".csv"), format="csv")
    print(f"wrote {svg}")
    print(f"wrote {csv}")
    return 0


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help prints and exits 0
        return 0 if exc.code in (0, None) else 1
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, not an input problem
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli())
