"""Single-filter performance analysis for convolutional networks.

Quantifies what each filter of a layer contributes to the output labels:
per-filter field matrices are normalized, clipped into Boolean matrices,
grouped into diagonal label clusters, and summarized as signal-to-noise
statistics. Cluster label sets then drive pruning masks over the fully
connected probe head. A built-in toy convolutional pipeline exercises the
whole procedure end to end.
"""

from .afcc import (
    AfccMask,
    FcTopology,
    MaskStats,
    apply_mask,
    build_mask,
    load_mask,
    mask_from_label_sets,
    mask_stats,
    read_mask,
    save_mask,
    write_mask,
)
from .bundle import (
    BundleValidationReport,
    FieldBundle,
    load_bundle,
    read_bundle,
    read_csv_matrices,
    save_bundle,
    validate,
    write_bundle,
)
from .clusters import (
    DEFAULT_THRESHOLD,
    Cluster,
    FilterAnalysis,
    LayerStats,
    aggregate_layer,
    analysis_report,
    analyze_bundle,
    analyze_filter,
    clip,
    external_noise,
    find_clusters,
    normalize,
    read_report,
    write_report,
)
from .snr import (
    ErrorPoint,
    LabelBreakdown,
    LinearFit,
    SnrEstimate,
    estimate_snr,
    external_noise_estimate,
    fit_error_vs_k,
    internal_noise_estimate,
    per_label_breakdown,
    signal_estimate,
    snr_external,
)

__version__ = "0.1.0"
