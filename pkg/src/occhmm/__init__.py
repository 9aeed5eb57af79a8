"""Multi-camera occlusion and sudden-appearance-change detection toolkit.

Core pieces: an exact recursive Bayes filter over joint binary hidden states
(`hmm_filter`), a brute-force enumeration reference (`oracle`), per-camera
affine-subspace appearance models (`subspace`), a small naive-Bayes tracker
analog (`tracker`), posterior-to-learning-rate control (`control`), a
synthetic scenario generator (`simulate`), and file formats plus a CLI
(`io`, `config`, `pipeline`, `cli`).
"""

from .control import ControlConfig, alarm, lambda_for
from .hmm_filter import (
    BeliefState,
    EmissionParams,
    FilterStep,
    HiddenState,
    ModelParams,
    NumericalUnderflow,
    ObservationVector,
    TransitionParams,
    chain_matrix,
    default_prior,
    emission_density,
    joint_likelihood,
    joint_log_likelihood,
    marginal_appearance_change,
    marginal_occlusion,
    run,
    step,
    transition_prob,
    uniform_prior,
)
from .oracle import brute_force_marginals
from .simulate import GroundTruth, RenderConfig, ScenarioConfig, generate, render_scene
from .subspace import (
    AffineSubspace,
    InsufficientData,
    gated_update,
    init_from_batch,
    residual_distance,
    update,
)
from .tracker import (
    BoundingBox,
    SparseFeatureExtractor,
    TrackerModel,
    classify,
    extract,
    iou,
    search,
    update_model,
)

__version__ = "0.1.0"
