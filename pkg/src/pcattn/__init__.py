"""Self-attention context aggregation for point clouds.

Framework-free (numpy-only) implementations of full and deformable
self-attention over discretized point clouds, the geometric sampling
primitives they need (farthest point sampling, k-NN, ball query), verified
reverse-mode gradients for the full-attention block, and an analytic
parameter/FLOP cost model for attention-augmented detection backbones.
"""

# Pin BLAS pools to a single thread before numpy's first import: threaded
# BLAS reorders floating-point reductions and would break the package's
# bit-reproducibility contract.  Explicit user settings are respected.
import os as _os

for _var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .bench import BenchResult, bench_pair, check_memory_budget, estimate_attention_bytes
from .checks import CHECK_NAMES, CheckResult, run_checks
from .configio import AttentionRuntime, ConfigError, ExtractConfig, load_extract_config
from .costmodel import (
    ArchConfig,
    Comparison,
    CostReport,
    CountingRules,
    compare,
    cost_report,
    count_flops,
    count_params,
    flop_breakdown,
    list_shipped_configs,
    load_counting_rules,
    param_breakdown,
    parse_config,
    serialize_config,
    shipped_config_path,
)
from .dsa import (
    AttentionUpsampler,
    DeformedSubset,
    DsaParams,
    DsaWeights,
    IdwUpsampler,
    aggregate_features,
    deform_vertices,
    dsa_forward,
    random_dsa_weights,
    upsample_attention,
    upsample_idw,
)
from .fsa import (
    AttentionOutput,
    FsaWeights,
    GradTape,
    encode_positions,
    fsa_backward,
    fsa_forward,
    group_norm,
    local_maxpool_baseline,
    random_fsa_weights,
)
from .geom import (
    IndexSet,
    Neighborhood,
    ball_query,
    ball_query_with_fallback,
    fps,
    knn,
    pairwise_sq_dists,
)
from .parallel import get_max_threads, set_max_threads
from .pcio import (
    EncoderWeights,
    FeatureGraph,
    GridSpec,
    PointCloud,
    crop_range,
    discretize,
    load_scan,
    random_encoder_weights,
    synthetic_scan,
    write_scan,
)
from .serialize import (
    load_dsa_weights,
    load_fsa_weights,
    load_tensors,
    save_dsa_weights,
    save_fsa_weights,
    save_tensors,
)

__all__ = [
    "__version__",
    # attention
    "AttentionOutput",
    "FsaWeights",
    "GradTape",
    "encode_positions",
    "fsa_backward",
    "fsa_forward",
    "group_norm",
    "local_maxpool_baseline",
    "random_fsa_weights",
    "AttentionUpsampler",
    "DeformedSubset",
    "DsaParams",
    "DsaWeights",
    "IdwUpsampler",
    "aggregate_features",
    "deform_vertices",
    "dsa_forward",
    "random_dsa_weights",
    "upsample_attention",
    "upsample_idw",
    # geometry
    "IndexSet",
    "Neighborhood",
    "ball_query",
    "ball_query_with_fallback",
    "fps",
    "knn",
    "pairwise_sq_dists",
    # point-cloud io
    "EncoderWeights",
    "FeatureGraph",
    "GridSpec",
    "PointCloud",
    "crop_range",
    "discretize",
    "load_scan",
    "random_encoder_weights",
    "synthetic_scan",
    "write_scan",
    # serialization
    "load_dsa_weights",
    "load_fsa_weights",
    "load_tensors",
    "save_dsa_weights",
    "save_fsa_weights",
    "save_tensors",
    # cost model
    "ArchConfig",
    "Comparison",
    "CostReport",
    "CountingRules",
    "compare",
    "cost_report",
    "count_flops",
    "count_params",
    "flop_breakdown",
    "list_shipped_configs",
    "load_counting_rules",
    "param_breakdown",
    "parse_config",
    "serialize_config",
    "shipped_config_path",
    # configs
    "AttentionRuntime",
    "ConfigError",
    "ExtractConfig",
    "load_extract_config",
    # runtime checks / bench / parallel
    "CHECK_NAMES",
    "CheckResult",
    "run_checks",
    "BenchResult",
    "bench_pair",
    "check_memory_budget",
    "estimate_attention_bytes",
    "get_max_threads",
    "set_max_threads",
]
