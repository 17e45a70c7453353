"""Shared builders for the test suite.

WAV construction deliberately goes through the stdlib wave module (or raw
struct packing for float32) so the decoder under test is checked against an
independent writer.
"""
from __future__ import annotations

import io
import struct
import wave

import numpy as np

from probebench import DatasetManifest, EmbeddingTable, ExampleRecord, ProviderSpec


def pcm16_wav_bytes(ints: np.ndarray, rate: int, channels: int = 1) -> bytes:
    """Interleaved int16 frames -> WAV bytes via the stdlib writer."""
    ints = np.asarray(ints, dtype="<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as writer:
        writer.setnchannels(channels)
        writer.setsampwidth(2)
        writer.setframerate(rate)
        writer.writeframes(ints.tobytes())
    return buf.getvalue()


def float32_wav_bytes(samples: np.ndarray, rate: int, channels: int = 1) -> bytes:
    payload = np.asarray(samples, dtype="<f4").tobytes()
    fmt = struct.pack(
        "<HHIIHH", 3, channels, rate, rate * 4 * channels, 4 * channels, 32
    )
    body = (
        b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    return b"RIFF" + struct.pack("<I", len(body)) + body


def tone(frequency: float, rate: int, seconds: float, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(round(rate * seconds)) / rate
    return amplitude * np.sin(2.0 * np.pi * frequency * t)


def gaussian_dataset(
    n_classes: int,
    per_class: int,
    dim: int,
    axis_scale: float,
    data_seed: int,
    name: str = "synthetic",
) -> tuple[EmbeddingTable, DatasetManifest]:
    """Isotropic unit-variance Gaussians, class c centered at axis_scale*e_c."""
    rng = np.random.default_rng(data_seed)
    ids, labels, rows = [], [], []
    for c in range(n_classes):
        mean = np.zeros(dim)
        mean[c] = axis_scale
        for i in range(per_class):
            ids.append(f"c{c}-{i:03d}")
            labels.append(f"class{c}")
            rows.append(mean + rng.normal(size=dim))
    table = EmbeddingTable(
        ProviderSpec("identity", 16000, 1.0, dim),
        ids,
        np.asarray(rows, dtype=np.float32),
    )
    records = tuple(
        ExampleRecord(example_id, "unused.wav", label)
        for example_id, label in zip(ids, labels)
    )
    return table, DatasetManifest(name, records)


def manifest_csv_text(manifest: DatasetManifest, audio_paths: dict[str, str] | None = None) -> str:
    lines = ["example_id,audio_path,label,source_recording"]
    for record in manifest.records:
        path = (audio_paths or {}).get(record.example_id, record.audio_path)
        lines.append(
            f"{record.example_id},{path},{record.label},{record.source_recording or ''}"
        )
    return "\n".join(lines) + "\n"
