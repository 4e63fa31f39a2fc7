"""modelpress: a desk-scale workbench for layer-wise model compression.

Combines unstructured pruning with per-layer importance metrics, KV-cache
quantization with per-layer bit-widths, and a Tree-structured Parzen
Estimator search that allocates both under a global budget, using
perplexity on a byte-level corpus as the objective.
"""

from .container_io import FormatError, read_container, write_container
from .engine import (
    CalibrationStats,
    KVCache,
    calibrate,
    forward_step,
    load_calibration,
    perplexity,
    reconstruction_loss,
    save_calibration,
)
from .model import (
    PRUNABLE_MODULES,
    Checkpoint,
    ModelConfig,
    detokenize_bytes,
    generate_toy_model,
    load_checkpoint,
    save_checkpoint,
    tokenize_bytes,
)
from .pruning import (
    METRIC_KINDS,
    SparsityProfile,
    apply_profile,
    measure_sparsity,
    metric_magnitude,
    metric_optspa,
    metric_wanda,
    select_mask,
)
from .quantization import (
    BandwidthProfile,
    KVCacheConfig,
    QuantizedBlock,
    dequantize,
    make_kv_config,
    quantize,
)
from .report import emit_report
from .search import (
    SearchError,
    SearchResult,
    SearchSpace,
    TpeState,
    TrialRecord,
    check_feasible,
    opposite_profile,
    read_ledger,
    run_search,
    search_bandwidth,
    search_sparsity,
    write_ledger,
)
from .tensor_ops import axis_l2_norms, matmul, softmax, stable_argsort

__version__ = "0.1.0"
