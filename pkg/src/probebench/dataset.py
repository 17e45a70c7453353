"""Task manifests and deterministic k-shot train/eval splits.

Splits are a pure function of (canonicalized manifest, k, seed): example ids
are sorted within each class before a pinned splitmix64-driven shuffle, so the
same split comes out on every platform and regardless of manifest row order.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from ._rng import SplitMix64, fnv1a64, shuffled

DEFAULT_SEED_BATTERY = (101, 102, 103, 104, 105)

_MASK64 = (1 << 64) - 1

_REQUIRED_COLUMNS = ("example_id", "audio_path", "label")


class ManifestError(ValueError):
    """Manifest failed validation."""


@dataclass(frozen=True)
class ExampleRecord:
    example_id: str
    audio_path: str
    label: str
    source_recording: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    records: tuple[ExampleRecord, ...]
    classes: tuple[str, ...] = field(init=False)

    def __post_init__(self) -> None:
        if not self.records:
            raise ManifestError("manifest has no records")
        seen: dict[str, int] = {}
        duplicates = []
        for record in self.records:
            if not record.label:
                raise ManifestError(f"record {record.example_id!r} has an empty label")
            if record.example_id in seen:
                duplicates.append(record.example_id)
            seen[record.example_id] = 1
        if duplicates:
            raise ManifestError(f"duplicate example ids: {sorted(set(duplicates))}")
        object.__setattr__(
            self, "classes", tuple(sorted({r.label for r in self.records}))
        )

    def __len__(self) -> int:
        return len(self.records)

    def ids_by_class(self) -> dict[str, list[str]]:
        """Example ids per class, each list in canonical (lexicographic) order."""
        by_class: dict[str, list[str]] = {c: [] for c in self.classes}
        for record in self.records:
            by_class[record.label].append(record.example_id)
        return {c: sorted(ids) for c, ids in by_class.items()}

    def labels_for(self, ids: list[str] | tuple[str, ...]) -> list[str]:
        lookup = {r.example_id: r.label for r in self.records}
        return [lookup[i] for i in ids]

    def record_for(self, example_id: str) -> ExampleRecord:
        for record in self.records:
            if record.example_id == example_id:
                return record
        raise KeyError(example_id)


def load_manifest(source, name: str | None = None) -> DatasetManifest:
    """Load a manifest CSV with columns example_id,audio_path,label[,source_recording]."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if name is None:
            name = path.stem
        with open(path, newline="", encoding="utf-8") as handle:
            return _parse_manifest(handle, name)
    return _parse_manifest(source, name or "dataset")


def _parse_manifest(handle, name: str) -> DatasetManifest:
    reader = csv.DictReader(handle)
    if reader.fieldnames is None:
        raise ManifestError("manifest is empty")
    missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise ManifestError(f"manifest is missing columns: {missing}")
    records = []
    for row_number, row in enumerate(reader, start=2):
        for column in _REQUIRED_COLUMNS:
            value = row.get(column)
            if value is None or value == "":
                raise ManifestError(f"row {row_number}: missing {column}")
        records.append(
            ExampleRecord(
                example_id=row["example_id"],
                audio_path=row["audio_path"],
                label=row["label"],
                source_recording=row.get("source_recording") or None,
            )
        )
    if not records:
        raise ManifestError("manifest has no data rows")
    return DatasetManifest(name=name, records=tuple(records))


def write_manifest(manifest: DatasetManifest, destination) -> None:
    """Write a manifest back out as CSV (inverse of load_manifest)."""
    grouped = any(r.source_recording for r in manifest.records)
    columns = list(_REQUIRED_COLUMNS) + (["source_recording"] if grouped else [])
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for r in manifest.records:
        row = [r.example_id, r.audio_path, r.label]
        if grouped:
            row.append(r.source_recording or "")
        writer.writerow(row)
    Path(destination).write_text(buffer.getvalue(), encoding="utf-8")


class SplitError(ValueError):
    """Split request is invalid for the manifest."""


@dataclass(frozen=True)
class SplitSpec:
    """k-shot train/eval partition for one (dataset, k, seed).

    train_ids lists are in shuffled order, so for a fixed seed the k-shot
    train set is a prefix of the (k+1)-shot train set. excluded_ids is only
    populated by grouped splitting, where the boundary recording's leftover
    examples must stay out of eval to avoid leakage.
    """

    k: int
    seed: int
    train_ids: dict[str, tuple[str, ...]]
    eval_ids: tuple[str, ...]
    excluded_ids: tuple[str, ...] = ()

    def all_train_ids(self) -> list[str]:
        """Train ids flattened in class order (classes sorted, ids in shuffle order)."""
        out: list[str] = []
        for cls in sorted(self.train_ids):
            out.extend(self.train_ids[cls])
        return out

    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(self.train_ids))

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "seed": self.seed,
            "train": {c: list(ids) for c, ids in self.train_ids.items()},
            "eval": list(self.eval_ids),
        }
        if self.excluded_ids:
            payload["excluded"] = list(self.excluded_ids)
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        payload = json.loads(text)
        return cls(
            k=payload["k"],
            seed=payload["seed"],
            train_ids={c: tuple(ids) for c, ids in payload["train"].items()},
            eval_ids=tuple(payload["eval"]),
            excluded_ids=tuple(payload.get("excluded", ())),
        )


def _class_rng(seed: int, class_name: str) -> SplitMix64:
    return SplitMix64((seed ^ fnv1a64(class_name)) & _MASK64)


def kshot_split(
    manifest: DatasetManifest,
    k: int,
    seed: int,
    group_by_recording: bool = False,
) -> SplitSpec:
    """Draw k train examples per class; everything else is eval.

    Per class: sort ids, Fisher-Yates shuffle seeded by (seed XOR
    fnv1a64(class)), take the first k. Grouped mode shuffles whole source
    recordings instead and never lets one recording straddle train and eval.
    """
    if k < 0:
        raise SplitError("k must be non-negative")
    by_class = manifest.ids_by_class()
    for cls, ids in by_class.items():
        if len(ids) <= k:
            raise SplitError(
                f"class {cls!r} has {len(ids)} examples; need more than k={k}"
            )
    if group_by_recording:
        return _grouped_split(manifest, k, seed)
    train: dict[str, tuple[str, ...]] = {}
    eval_ids: list[str] = []
    for cls, ids in by_class.items():
        order = shuffled(ids, _class_rng(seed, cls))
        train[cls] = tuple(order[:k])
        eval_ids.extend(order[k:])
    return SplitSpec(k=k, seed=seed, train_ids=train, eval_ids=tuple(sorted(eval_ids)))


def _grouped_split(manifest: DatasetManifest, k: int, seed: int) -> SplitSpec:
    recordings: dict[str, dict[str, list[str]]] = {}
    for record in manifest.records:
        group = record.source_recording or record.example_id
        recordings.setdefault(record.label, {}).setdefault(group, []).append(
            record.example_id
        )
    train: dict[str, tuple[str, ...]] = {}
    eval_ids: list[str] = []
    excluded: list[str] = []
    for cls in sorted(recordings):
        groups = {g: sorted(ids) for g, ids in recordings[cls].items()}
        order = shuffled(sorted(groups), _class_rng(seed, cls))
        picked: list[str] = []
        index = 0
        while len(picked) < k:
            members = groups[order[index]]
            room = k - len(picked)
            picked.extend(members[:room])
            if room < len(members):
                excluded.extend(members[room:])
            index += 1
        train[cls] = tuple(picked)
        for group in order[index:]:
            eval_ids.extend(groups[group])
    return SplitSpec(
        k=k,
        seed=seed,
        train_ids=train,
        eval_ids=tuple(sorted(eval_ids)),
        excluded_ids=tuple(sorted(excluded)),
    )


def seed_battery(
    manifest: DatasetManifest,
    k: int,
    seeds=DEFAULT_SEED_BATTERY,
    group_by_recording: bool = False,
) -> list[SplitSpec]:
    """One split per seed; seeds must be non-empty and distinct."""
    seeds = tuple(seeds)
    if not seeds:
        raise SplitError("seed battery is empty")
    if len(set(seeds)) != len(seeds):
        raise SplitError(f"seed battery has duplicates: {seeds}")
    return [kshot_split(manifest, k, s, group_by_recording) for s in seeds]
