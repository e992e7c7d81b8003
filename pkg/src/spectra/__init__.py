"""Spectral structure of weight checkpoints: measurement, intervention,
and spectrally restricted finetuning."""

from .diagnostics import (
    AlignmentSeries,
    DeltaSpectrum,
    SpectrumChangeStats,
    align_factorizations,
    delta_spectrum,
    effective_rank,
    explained_variance,
    explained_variance_curve,
    min_rank_for_energy,
    spectrum_change,
    trajectory_alignment,
)
from .errors import (
    ConvergenceError,
    FormatError,
    ShapeMismatchError,
    SpectraError,
    TrainingDivergedError,
)
from .interventions import (
    RankSet,
    mask_by_order,
    randomize_vectors,
    replace_vectors,
    swap_vectors,
    zero_vectors,
)
from .linalg import (
    SvdFactorization,
    WeightMatrix,
    degenerate_ranks,
    frobenius,
    reconstruct,
    spectral_gap,
    svd,
)
from .srf import (
    FixedBatch,
    SpectralAdapter,
    SyntheticTask,
    TrainConfig,
    TrainLog,
    adapter_effective_weight,
    adapter_forward,
    adapter_grad,
    block_location_sweep,
    finite_diff_check,
    make_outside_task,
    make_recovery_task,
    rank_budget_sweep,
    train_srf,
    train_srf_chain,
    write_train_log,
)
from .stats import CorrelationResult, bh_fdr, pearson
from .tensor_store import (
    CheckpointManifest,
    LayerPair,
    SkippedTensorWarning,
    TensorRecord,
    match_layers,
    read_checkpoint,
    write_checkpoint,
)

__version__ = "0.1.0"
