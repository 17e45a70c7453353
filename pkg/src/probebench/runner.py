"""Experiment grid orchestration: embed, split, train, score, log.

The grid is provider x dataset x dim x probe x k x seed. Every cell is hashed
over everything that determines its outcome; the results log is append-only
newline-delimited JSON keyed by that hash, which is what makes interrupted
runs resumable and completed runs auditable.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from hashlib import sha256
from pathlib import Path

from .audio import AudioClip, decode_wav
from .dataset import (
    DEFAULT_SEED_BATTERY,
    DatasetManifest,
    kshot_split,
    load_manifest,
)
from .embedding import (
    PROVIDER_PRESETS,
    EmbeddingTable,
    ExternalEmbedder,
    ProviderSpec,
    ReferenceEmbedder,
    embed_dataset,
    read_table,
    reference_provider_spec,
    truncate_dims,
    write_table,
)
from .metrics import MetricsReport, metrics_report
from .probe import ProbeConfig, predict_scores, train_probe

RESULTS_LOG_NAME = "results.ndjson"
WORKERS_ENV_VAR = "PROBEBENCH_WORKERS"
DEFAULT_SHOTS = (4, 8, 16, 32)

_PROVIDER_FIELDS = {"name", "preset", "spec", "resample_mode", "table", "command"}
_CONFIG_FIELDS = {
    "datasets", "providers", "shots", "seeds", "probe", "probes",
    "ablations", "outputs", "workers", "grouped_splits",
}


class ConfigError(ValueError):
    """Experiment configuration rejected before any work starts."""


@dataclass(frozen=True)
class ProviderEntry:
    """One embedding source.

    Exactly one of three shapes: a prebuilt table on disk (table_path, with
    an optional {dataset} placeholder), an external embedder subprocess
    (command), or neither, which means the built-in reference embedder.
    """

    name: str
    spec: ProviderSpec | None = None
    table_path: str | None = None
    command: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("provider name must be non-empty")
        if self.table_path is not None and self.command is not None:
            raise ConfigError(
                f"provider {self.name!r}: give a table path or a command, not both"
            )
        if self.command is not None and self.spec is None:
            raise ConfigError(
                f"provider {self.name!r}: an external command needs a provider spec"
            )

    @property
    def source(self) -> str:
        if self.table_path is not None:
            return "table"
        if self.command is not None:
            return "command"
        return "reference"

    def resolved_table_path(self, dataset_name: str) -> str:
        if self.table_path is None:
            raise ConfigError(f"provider {self.name!r} has no table path")
        return self.table_path.replace("{dataset}", dataset_name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "table": self.table_path,
            "command": None if self.command is None else list(self.command),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ProviderEntry":
        if not isinstance(payload, dict):
            raise ConfigError("provider entry must be an object")
        unknown = set(payload) - _PROVIDER_FIELDS
        if unknown:
            raise ConfigError(f"unknown provider fields: {sorted(unknown)}")
        name = payload.get("name")
        if not name:
            raise ConfigError("provider entry needs a name")
        if "preset" in payload and "spec" in payload:
            raise ConfigError(f"provider {name!r}: preset and spec are mutually exclusive")
        spec = None
        if "preset" in payload:
            preset = payload["preset"]
            if preset not in PROVIDER_PRESETS:
                raise ConfigError(
                    f"unknown preset {preset!r}; known: {sorted(PROVIDER_PRESETS)}"
                )
            spec = PROVIDER_PRESETS[preset]
        elif "spec" in payload:
            spec = ProviderSpec.from_dict(payload["spec"])
        if "resample_mode" in payload:
            if spec is None:
                raise ConfigError(f"provider {name!r}: resample_mode needs a preset or spec")
            spec = replace(spec, resample_mode=payload["resample_mode"])
        command = payload.get("command")
        if command is not None:
            command = tuple(str(part) for part in command)
        entry = cls(
            name=name, spec=spec, table_path=payload.get("table"), command=command
        )
        if entry.source == "reference" and entry.spec is None:
            entry = replace(entry, spec=reference_provider_spec())
        return entry


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[str, ...]
    providers: tuple[ProviderEntry, ...]
    shots: tuple[int, ...] = DEFAULT_SHOTS
    seeds: tuple[int, ...] = DEFAULT_SEED_BATTERY
    probes: tuple[ProbeConfig, ...] = (ProbeConfig(),)
    ablations: tuple[int, ...] = ()
    outputs: str = "runs"
    workers: int = 1
    grouped_splits: bool = False

    def __post_init__(self) -> None:
        for axis in ("datasets", "providers", "shots", "seeds", "probes"):
            if not getattr(self, axis):
                raise ConfigError(f"{axis} must be non-empty")
        if any(k < 1 for k in self.shots):
            raise ConfigError("shots must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(d < 1 for d in self.ablations):
            raise ConfigError("ablation dims must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def dims_axis(self) -> tuple[int | None, ...]:
        """None means the provider's full dimension; ablations follow."""
        axis: list[int | None] = [None]
        for d in self.ablations:
            if d not in axis:
                axis.append(d)
        return tuple(axis)

    def expected_cells(self) -> int:
        return (
            len(self.providers) * len(self.datasets) * len(self.dims_axis())
            * len(self.probes) * len(self.shots) * len(self.seeds)
        )

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise ConfigError("experiment config must be an object")
        unknown = set(payload) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "probe" in payload and "probes" in payload:
            raise ConfigError("give probe or probes, not both")
        if "probes" in payload:
            probes = tuple(ProbeConfig.from_dict(p) for p in payload["probes"])
        elif "probe" in payload:
            probes = (ProbeConfig.from_dict(payload["probe"]),)
        else:
            probes = (ProbeConfig(),)
        try:
            return cls(
                datasets=tuple(str(p) for p in payload.get("datasets", ())),
                providers=tuple(
                    ProviderEntry.from_dict(p) for p in payload.get("providers", ())
                ),
                shots=tuple(int(k) for k in payload.get("shots", DEFAULT_SHOTS)),
                seeds=tuple(int(s) for s in payload.get("seeds", DEFAULT_SEED_BATTERY)),
                probes=probes,
                ablations=tuple(int(d) for d in payload.get("ablations", ())),
                outputs=str(payload.get("outputs", "runs")),
                workers=int(payload.get("workers", 1)),
                grouped_splits=bool(payload.get("grouped_splits", False)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


@dataclass(frozen=True)
class Cell:
    """One grid coordinate, in deterministic enumeration order."""

    provider: ProviderEntry
    dataset_path: str
    dataset_name: str
    dim: int | None
    probe: ProbeConfig
    k: int
    seed: int
    grouped: bool

    @property
    def provider_label(self) -> str:
        return self.provider.name if self.dim is None else f"{self.provider.name}@{self.dim}"

    def hash_payload(self) -> dict:
        return {
            "provider": self.provider.to_dict(),
            "dataset": self.dataset_name,
            "manifest": self.dataset_path,
            "dim": self.dim,
            "probe": self.probe.to_dict(),
            "k": self.k,
            "seed": self.seed,
            "grouped": self.grouped,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.hash_payload(), sort_keys=True, separators=(",", ":"))
        return sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    provider: str
    dataset: str
    k: int
    seed: int
    probe_kind: str
    resample_mode: str | None
    dim: int | None
    config_hash: str
    status: str
    metrics: MetricsReport | None = None
    error: str | None = None
    wall_time_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "provider": self.provider,
            "dataset": self.dataset,
            "k": self.k,
            "seed": self.seed,
            "probe_kind": self.probe_kind,
            "resample_mode": self.resample_mode,
            "dim": self.dim,
            "config_hash": self.config_hash,
            "status": self.status,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "error": self.error,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, payload: dict) -> "RunRecord":
        metrics = payload.get("metrics")
        return cls(
            provider=payload["provider"],
            dataset=payload["dataset"],
            k=int(payload["k"]),
            seed=int(payload["seed"]),
            probe_kind=payload["probe_kind"],
            resample_mode=payload.get("resample_mode"),
            dim=payload.get("dim"),
            config_hash=payload["config_hash"],
            status=payload["status"],
            metrics=None if metrics is None else MetricsReport.from_dict(metrics),
            error=payload.get("error"),
            wall_time_s=float(payload.get("wall_time_s", 0.0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_dict(json.loads(text))


def load_results_log(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(RunRecord.from_json(line))
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValueError(f"{path}:{line_no}: bad results record: {exc}") from exc
    return records


def _load_clips(manifest: DatasetManifest, manifest_path: str) -> dict[str, AudioClip]:
    base = Path(manifest_path).parent
    clips = {}
    for record in manifest.records:
        audio_path = Path(record.audio_path)
        if not audio_path.is_absolute():
            audio_path = base / audio_path
        clips[record.example_id] = decode_wav(audio_path.read_bytes())
    return clips


def _build_table(
    entry: ProviderEntry,
    manifest: DatasetManifest,
    manifest_path: str,
    cache_dir: Path | None,
) -> EmbeddingTable:
    if entry.source == "table":
        path = Path(entry.resolved_table_path(manifest.name))
        if not path.exists():
            raise FileNotFoundError(f"embedding table not found: {path}")
        table = read_table(path, provider=entry.spec)
        missing = [r.example_id for r in manifest.records if r.example_id not in table]
        if missing:
            raise ConfigError(
                f"table {path} lacks {len(missing)} manifest ids, first: {missing[:5]}"
            )
        return table
    cache_path = None
    if cache_dir is not None:
        cache_path = cache_dir / f"{entry.name}-{manifest.name}.embt"
        if cache_path.exists():
            return read_table(cache_path, provider=entry.spec)
    clips = _load_clips(manifest, manifest_path)
    spec = entry.spec if entry.spec is not None else reference_provider_spec()
    if entry.source == "command":
        with ExternalEmbedder(list(entry.command)) as embedder:
            table = embed_dataset(embedder, spec, clips)
    else:
        table = embed_dataset(ReferenceEmbedder(), spec, clips)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        write_table(table, cache_path)
    return table


def _run_cell(cell: Cell, table: EmbeddingTable, manifest: DatasetManifest) -> RunRecord:
    start = time.perf_counter()
    mode = table.provider.resample_mode
    try:
        working = table if cell.dim is None else truncate_dims(table, cell.dim)
        split = kshot_split(manifest, cell.k, cell.seed, group_by_recording=cell.grouped)
        model = train_probe(working, split, cell.probe)
        scores = predict_scores(model, working, split.eval_ids)
        report = metrics_report(
            scores, manifest.labels_for(list(split.eval_ids)), model.class_names
        )
        status, metrics, error = "ok", report, None
    except Exception as exc:
        status, metrics, error = "error", None, f"{type(exc).__name__}: {exc}"
    return RunRecord(
        provider=cell.provider_label,
        dataset=cell.dataset_name,
        k=cell.k,
        seed=cell.seed,
        probe_kind=cell.probe.kind,
        resample_mode=mode,
        dim=cell.dim,
        config_hash=cell.config_hash(),
        status=status,
        metrics=metrics,
        error=error,
        wall_time_s=round(time.perf_counter() - start, 6),
    )


def _failed_cell(cell: Cell, message: str) -> RunRecord:
    return RunRecord(
        provider=cell.provider_label,
        dataset=cell.dataset_name,
        k=cell.k,
        seed=cell.seed,
        probe_kind=cell.probe.kind,
        resample_mode=None,
        dim=cell.dim,
        config_hash=cell.config_hash(),
        status="error",
        error=message,
    )


def _worker_count(config: ExperimentConfig) -> int:
    override = os.environ.get(WORKERS_ENV_VAR)
    if override:
        try:
            workers = int(override)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be an integer, got {override!r}") from exc
        if workers < 1:
            raise ConfigError(f"{WORKERS_ENV_VAR} must be at least 1, got {workers}")
        return workers
    return config.workers


def enumerate_cells(config: ExperimentConfig) -> list[Cell]:
    cells = []
    for entry in config.providers:
        for dataset_path in config.datasets:
            name = Path(dataset_path).stem
            for dim in config.dims_axis():
                for probe in config.probes:
                    for k in config.shots:
                        for seed in config.seeds:
                            cells.append(Cell(
                                provider=entry,
                                dataset_path=dataset_path,
                                dataset_name=name,
                                dim=dim,
                                probe=probe,
                                k=k,
                                seed=seed,
                                grouped=config.grouped_splits,
                            ))
    return cells


def run_experiment(config: ExperimentConfig, log_path=None) -> list[RunRecord]:
    """Execute every grid cell not already completed in the results log.

    Returns the full record set (prior successes plus this run's work) in
    grid order. Cell failures become error records, not exceptions.
    """
    out_dir = Path(config.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path is not None else out_dir / RESULTS_LOG_NAME
    prior = load_results_log(log_path)
    done = {r.config_hash: r for r in prior if r.ok}

    cells = enumerate_cells(config)
    pending = [c for c in cells if c.config_hash() not in done]

    # Embed serially before the pool: external embedders hold subprocesses
    # and the cache write must happen exactly once per (provider, dataset).
    manifests: dict[str, DatasetManifest] = {}
    tables: dict[tuple[str, str], EmbeddingTable] = {}
    broken: dict[tuple[str, str], str] = {}
    cache_dir = out_dir / "tables"
    for cell in pending:
        if cell.dataset_path not in manifests:
            manifests[cell.dataset_path] = load_manifest(cell.dataset_path)
        key = (cell.provider.name, cell.dataset_name)
        if key in tables or key in broken:
            continue
        try:
            tables[key] = _build_table(
                cell.provider, manifests[cell.dataset_path], cell.dataset_path, cache_dir
            )
        except Exception as exc:
            broken[key] = f"{type(exc).__name__}: {exc}"

    def job(cell: Cell) -> RunRecord:
        key = (cell.provider.name, cell.dataset_name)
        if key in broken:
            return _failed_cell(cell, broken[key])
        return _run_cell(cell, tables[key], manifests[cell.dataset_path])

    fresh: dict[str, RunRecord] = {}
    workers = _worker_count(config)
    with open(log_path, "a", encoding="utf-8") as log:
        if workers == 1:
            for cell in pending:
                record = job(cell)
                fresh[record.config_hash] = record
                log.write(record.to_json() + "\n")
                log.flush()
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(job, cell) for cell in pending]
                for future in futures:
                    record = future.result()
                    fresh[record.config_hash] = record
                    log.write(record.to_json() + "\n")
                    log.flush()

    out = []
    for cell in cells:
        digest = cell.config_hash()
        out.append(done[digest] if digest in done else fresh[digest])
    return out


def summarize_run(records: list[RunRecord]) -> str:
    failures = [r for r in records if not r.ok]
    lines = [f"{len(records)} cells: {len(records) - len(failures)} ok, {len(failures)} failed"]
    for record in failures:
        lines.append(
            f"  failed {record.provider}/{record.dataset} k={record.k} "
            f"seed={record.seed}: {record.error}"
        )
    return "\n".join(lines)
