"""Provider metadata, embedding tables, and the clip -> vector pipeline.

A provider embeds fixed-length frames; this module owns everything around it:
rate adjustment, framing, mean pooling, and the id -> vector table that lets a
dataset be embedded exactly once.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Protocol, Sequence

import numpy as np

from ..audio import AudioClip, frame, reinterpret_rate, resample

RESAMPLE_MODES = ("resample", "reinterpret")


class EmbeddingError(ValueError):
    """Provider output violated its declared contract."""


@dataclass(frozen=True)
class ProviderSpec:
    """What a provider consumes (rate, window) and produces (dimension)."""

    name: str
    native_rate: int
    window_seconds: float
    embedding_dim: int
    resample_mode: str = "resample"

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("provider name must be non-empty")
        if self.native_rate <= 0:
            raise ValueError("native_rate must be positive")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be at least 1")
        if self.resample_mode not in RESAMPLE_MODES:
            raise ValueError(
                f"resample_mode must be one of {RESAMPLE_MODES}, got {self.resample_mode!r}"
            )

    @property
    def window_samples(self) -> int:
        return max(1, round(self.window_seconds * self.native_rate))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "native_rate": self.native_rate,
            "window_seconds": self.window_seconds,
            "embedding_dim": self.embedding_dim,
            "resample_mode": self.resample_mode,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ProviderSpec":
        return cls(
            name=payload["name"],
            native_rate=int(payload["native_rate"]),
            window_seconds=float(payload["window_seconds"]),
            embedding_dim=int(payload["embedding_dim"]),
            resample_mode=payload.get("resample_mode", "resample"),
        )


# Published characteristics of the commonly probed backbones; the harness
# talks to all of them through tables or the wire protocol, never in-process.
PROVIDER_PRESETS = {
    "perch": ProviderSpec("perch", 32000, 5.0, 1280),
    "birdnet": ProviderSpec("birdnet", 48000, 3.0, 1024),
    "audiomae": ProviderSpec("audiomae", 16000, 10.0, 1024),
    "yamnet": ProviderSpec("yamnet", 16000, 0.96, 1024),
    "vggish": ProviderSpec("vggish", 16000, 0.96, 128),
}


class FrameEmbedder(Protocol):
    """Anything that turns equal-length sample windows into vectors."""

    def embed_frames(self, frames: Sequence[np.ndarray], rate: int) -> list[np.ndarray]:
        ...


class EmbeddingTable:
    """Immutable example_id -> float32 vector map with provider metadata."""

    def __init__(self, provider: ProviderSpec, ids: Sequence[str], vectors) -> None:
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        ids = list(ids)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-d array (rows, dim)")
        if len(ids) != len(vectors):
            raise ValueError(f"{len(ids)} ids but {len(vectors)} vector rows")
        if len(set(ids)) != len(ids):
            raise ValueError("example ids must be unique")
        if vectors.size and not np.all(np.isfinite(vectors)):
            raise ValueError("embedding values must all be finite")
        if vectors.shape[1] != provider.embedding_dim:
            raise ValueError(
                f"vectors have dim {vectors.shape[1]}, provider declares {provider.embedding_dim}"
            )
        vectors.flags.writeable = False
        self.provider = provider
        self.ids = tuple(ids)
        self.vectors = vectors
        self._row_index = {example_id: i for i, example_id in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._row_index

    def row(self, example_id: str) -> np.ndarray:
        return self.vectors[self._row_index[example_id]]

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        """Rows for `ids` in the requested order; missing ids are an error."""
        missing = [i for i in ids if i not in self._row_index]
        if missing:
            raise KeyError(f"ids not in table: {missing[:10]}")
        return self.vectors[[self._row_index[i] for i in ids]]

    def as_mapping(self) -> dict[str, np.ndarray]:
        return {example_id: self.row(example_id) for example_id in self.ids}


def mean_pool(frame_vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of per-frame vectors."""
    if len(frame_vectors) == 0:
        raise EmbeddingError("cannot pool an empty list of vectors")
    first_shape = np.shape(frame_vectors[0])
    if len(first_shape) != 1:
        raise EmbeddingError("frame vectors must be one-dimensional")
    for v in frame_vectors:
        if np.shape(v) != first_shape:
            raise EmbeddingError(
                f"ragged frame vectors: {np.shape(v)} vs {first_shape}"
            )
    return np.mean(np.stack(frame_vectors), axis=0)


def embed_example(
    provider: FrameEmbedder, spec: ProviderSpec, clip: AudioClip
) -> np.ndarray:
    """Rate-adjust, frame, embed each frame, mean-pool: one vector per clip."""
    if len(clip) == 0:
        raise EmbeddingError("cannot embed an empty clip")
    if spec.resample_mode == "reinterpret":
        adjusted = reinterpret_rate(clip, spec.native_rate)
    else:
        adjusted = resample(clip, spec.native_rate)
    frames = frame(adjusted, spec.window_samples)
    vectors = provider.embed_frames(list(frames.frames), spec.native_rate)
    if len(vectors) != len(frames):
        raise EmbeddingError(
            f"provider returned {len(vectors)} vectors for {len(frames)} frames"
        )
    for index, vector in enumerate(vectors):
        if np.shape(vector) != (spec.embedding_dim,):
            raise EmbeddingError(
                f"provider returned dimension {np.size(vector)} for frame {index}, "
                f"expected {spec.embedding_dim}"
            )
    return mean_pool(vectors)


def embed_dataset(
    provider: FrameEmbedder,
    spec: ProviderSpec,
    clips: dict[str, AudioClip],
) -> EmbeddingTable:
    """Embed every clip (keyed by example id) into one table."""
    ids = list(clips)
    rows = np.empty((len(ids), spec.embedding_dim), dtype=np.float32)
    for i, example_id in enumerate(ids):
        rows[i] = embed_example(provider, spec, clips[example_id])
    return EmbeddingTable(spec, ids, rows)


def truncate_dims(table: EmbeddingTable, d: int) -> EmbeddingTable:
    """Keep the first d coordinates of every row (the size-ablation proxy)."""
    if not 1 <= d <= table.dim:
        raise ValueError(f"d must be in [1, {table.dim}], got {d}")
    if d == table.dim:
        return table
    return EmbeddingTable(
        replace(table.provider, embedding_dim=d),
        table.ids,
        table.vectors[:, :d],
    )
