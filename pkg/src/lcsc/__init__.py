"""Linear combination of saved checkpoints: merging, search, and analysis tools."""

from .containers import (
    Checkpoint,
    CheckpointSet,
    ContainerError,
    EmptyWindowError,
    LoraCheckpoint,
    LoraCheckpointSet,
    ManifestError,
    TensorEntry,
    TensorMap,
    decode_tensor_map,
    encode_tensor_map,
    load_checkpoint,
    load_lora_set,
    load_manifest,
    load_set,
    save_checkpoint,
    select_window,
)
from .evaluators import (
    EvaluatorError,
    EvaluatorHandle,
    ExternalEvaluator,
    QuadraticEvaluator,
    ReplayEvaluator,
    weights_digest,
)
from .landscape import GridSpec, plane_point, sweep, write_csv
from .merging import (
    CoefficientError,
    CoefficientVector,
    DegenerateCoefficientsError,
    EmaConfig,
    EvaluationFailure,
    combine,
    combine_lora,
    ema_coefficients,
    ema_grid,
    ema_recurrence,
    ema_sweep,
)
from .search import (
    Individual,
    SearchConfig,
    SearchError,
    SearchResult,
    crossover,
    initialize,
    mutate,
    run_search,
)
from .sgd_sim import (
    BoundCheck,
    SimConfig,
    TrajectoryStats,
    averaged_bound,
    check_averaged_bound,
    check_hull_exclusion,
    check_last_iterate_bound,
    evaluate_bounds,
    last_iterate_bound,
    run_trajectory,
)

__version__ = "0.1.0"
