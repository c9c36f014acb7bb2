"""UWB TDoA positioning with transformer-based CIR error correction."""

from .cir import InputTensor, ProcessedCir, build_input_tensor, iq_to_amplitude, normalize_minmax, trim_window
from .complexity import OperationCount, SweepResult, cnn_baseline_ops, op_count, pareto_front
from .encodings import (
    EncodingConfig,
    EncodingTables,
    apply_encodings,
    frequency_bands,
    learned_pe,
    spatial_pe,
    time_diff_pe,
)
from .metrics import MetricsReport, cep, mae, metrics_report
from .model import (
    CorrectionModel,
    ModelConfig,
    attention,
    encoder_forward,
    forward,
    load_checkpoint,
    make_model_config,
    regression_head,
    save_checkpoint,
)
from .patching import PatchConfig, PatchSet, TokenSequence, embed_patches, patch_multi_cir, patch_per_cir
from .simulate import (
    Box,
    ChannelConfig,
    Environment,
    RawCir,
    Sample,
    default_environment,
    generate_dataset,
    grid_trajectory,
    los_status,
    random_trajectory,
    synth_cir,
    timestamp_error,
)
from .tdoa import (
    SPEED_OF_LIGHT,
    Anchor,
    DdoaSet,
    PositionEstimate,
    SolverOptions,
    baseline_position,
    euclidean_distance,
    measured_ddoa_set,
    residuals,
    solve_tdoa,
    true_ddoa,
)
from .training import TrainConfig, compute_gradients, evaluate_model, train

__all__ = [name for name in dir() if not name.startswith("_")]
