"""Mean-field deep networks with importance-weighted regularizers,
discrete feature repopulation, and subsampling variance studies."""

from .net import (
    CheckpointError,
    ForwardTrace,
    Gradients,
    Loss,
    Network,
    ShapeMismatchError,
    backward,
    forward,
    init_network,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    sensitivities,
)
from .regularizers import (
    PRESETS,
    RegularizerSpec,
    layer_reg,
    reg_grad,
    top_reg,
    total_reg,
    weighted_reg,
    weighted_reg_grad_p,
)
from .repopulation import (
    ImportanceWeights,
    ProxConfig,
    project_scaled_simplex,
    resample,
    solve_weights,
    weighted_forward,
)
from .diagnostics import (
    KKTPair,
    approx_variance,
    feature_functions,
    kkt_pairs,
    pearson,
    sparsity_cdf,
)
from .sampling import (
    LeadingTerms,
    StudyResult,
    consistency_study,
    leading_terms,
    output_feature_gradients,
    subsample,
    variance_study,
)
from .trainer import (
    Adam,
    MetricsRecord,
    SGD,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    dfr_schedule,
    gen_data,
    train,
    widths_for,
)

__version__ = "0.1.0"
