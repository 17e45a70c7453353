"""Few-shot transfer benchmarking for frozen audio embeddings.

Embed a labeled clip collection once, then measure how much task signal a
cheap probe can extract from k examples per class: seeded splits, linear
and shallow nonlinear probes, rank-based metrics, shot curves, and 2-d
projections, all deterministic end to end.
"""

from .audio import AudioClip, AudioDecodeError, FrameSet, center_pad, decode_wav, frame, reinterpret_rate, resample
from .dataset import (
    DEFAULT_SEED_BATTERY,
    DatasetManifest,
    ExampleRecord,
    ManifestError,
    SplitError,
    SplitSpec,
    kshot_split,
    load_manifest,
    seed_battery,
    write_manifest,
)
from .embedding import (
    PROVIDER_PRESETS,
    EmbeddingError,
    EmbeddingTable,
    ExternalEmbedder,
    ProviderSpec,
    ReferenceEmbedder,
    embed_dataset,
    embed_example,
    mean_pool,
    read_table,
    reference_provider_spec,
    truncate_dims,
    write_table,
)
from .metrics import (
    MetricsReport,
    confusion_matrix,
    log_odds,
    macro_auc,
    metrics_report,
    roc_auc_binary,
    top1_accuracy,
    top_confusions,
)
from .probe import ProbeConfig, ProbeModel, predict_scores, train_probe
from .projection import TsneConfig, emit_scatter, tsne
from .report import render_results_table, render_shots_curve
from .runner import (
    ExperimentConfig,
    ProviderEntry,
    RunRecord,
    load_results_log,
    run_experiment,
)

__version__ = "0.1.0"
