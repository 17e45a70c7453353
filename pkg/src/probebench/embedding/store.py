"""Embedding table persistence.

Binary layout (little-endian throughout): magic "EMBT", format version u32,
dim u32, row count u64, then per row: id length u16 + UTF-8 id + dim * f32.
A CRC32 of everything between the magic and the checksum itself is appended.
The ProviderSpec travels in a JSON sidecar (<table path> + ".meta.json") so
the binary layout stays fixed while metadata still round-trips.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .core import EmbeddingTable, ProviderSpec

MAGIC = b"EMBT"
FORMAT_VERSION = 1


class TableFormatError(ValueError):
    """Table file failed structural or checksum validation."""


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def write_table(table: EmbeddingTable, destination) -> None:
    path = Path(destination)
    parts = [struct.pack("<IIQ", FORMAT_VERSION, table.dim, len(table))]
    for example_id, row in zip(table.ids, table.vectors):
        encoded = example_id.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"example id too long to store: {example_id[:40]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(row.astype("<f4", copy=False).tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    path.write_bytes(MAGIC + payload + struct.pack("<I", crc))
    _sidecar(path).write_text(
        json.dumps(table.provider.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def read_table(source, provider: ProviderSpec | None = None) -> EmbeddingTable:
    """Load a table; the provider comes from the sidecar unless given explicitly."""
    path = Path(source)
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 16 + 4:
        raise TableFormatError("file too short to be an embedding table")
    if blob[: len(MAGIC)] != MAGIC:
        raise TableFormatError(f"bad magic {blob[:4]!r}")
    payload = blob[len(MAGIC) : -4]
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(payload) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise TableFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    version, dim, count = struct.unpack_from("<IIQ", payload, 0)
    if version != FORMAT_VERSION:
        raise TableFormatError(f"unsupported format version {version}")
    offset = 16
    ids: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for i in range(count):
        if offset + 2 > len(payload):
            raise TableFormatError(f"truncated at row {i}: id length missing")
        (id_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        if offset + id_len + row_bytes > len(payload):
            raise TableFormatError(f"truncated at row {i}")
        ids.append(payload[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        rows[i] = np.frombuffer(payload, dtype="<f4", count=dim, offset=offset)
        offset += row_bytes
    if offset != len(payload):
        raise TableFormatError(f"{len(payload) - offset} trailing bytes after last row")
    if provider is None:
        provider = _load_sidecar(path, dim)
    return EmbeddingTable(provider, ids, rows)


def _load_sidecar(path: Path, dim: int) -> ProviderSpec:
    sidecar = _sidecar(path)
    if sidecar.exists():
        spec = ProviderSpec.from_dict(json.loads(sidecar.read_text(encoding="utf-8")))
        if spec.embedding_dim != dim:
            raise TableFormatError(
                f"sidecar declares dim {spec.embedding_dim}, file has dim {dim}"
            )
        return spec
    # No sidecar: synthesize minimal metadata from the filename and header.
    return ProviderSpec(
        name=path.stem or "table",
        native_rate=16000,
        window_seconds=1.0,
        embedding_dim=dim,
    )


def write_table_csv(table: EmbeddingTable, destination) -> None:
    """Interoperability export: header id,v0..v{d-1}; 9 significant digits."""
    path = Path(destination)
    header = "id," + ",".join(f"v{i}" for i in range(table.dim))
    lines = [header]
    for example_id, row in zip(table.ids, table.vectors):
        values = ",".join(f"{float(v):.9g}" for v in row)
        lines.append(f"{example_id},{values}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
