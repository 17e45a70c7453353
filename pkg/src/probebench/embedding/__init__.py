"""Embedding providers, pooling, and table persistence."""
from .core import (
    PROVIDER_PRESETS,
    EmbeddingError,
    EmbeddingTable,
    FrameEmbedder,
    ProviderSpec,
    embed_dataset,
    embed_example,
    mean_pool,
    truncate_dims,
)
from .external import ExternalEmbedder, ExternalEmbedderError, external_embed
from .reference import (
    REFERENCE_DIM,
    ReferenceEmbedder,
    reference_embed,
    reference_provider_spec,
)
from .store import TableFormatError, read_table, write_table, write_table_csv

__all__ = [
    "PROVIDER_PRESETS",
    "EmbeddingError",
    "EmbeddingTable",
    "FrameEmbedder",
    "ProviderSpec",
    "embed_dataset",
    "embed_example",
    "mean_pool",
    "truncate_dims",
    "ExternalEmbedder",
    "ExternalEmbedderError",
    "external_embed",
    "REFERENCE_DIM",
    "ReferenceEmbedder",
    "reference_embed",
    "reference_provider_spec",
    "TableFormatError",
    "read_table",
    "write_table",
    "write_table_csv",
]
