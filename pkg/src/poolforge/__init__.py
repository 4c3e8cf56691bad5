"""Batch active learning for energy/force regression models.

Feature-space posterior-variance acquisition with chunked streaming and
bounded memory, gradient-based feature maps over a compact surrogate
potential, LCMD batch selection, brute-force oracles, and a synthetic
reaction-pathway benchmark harness.
"""

from .acquisition import (
    ArrayFeatureSource,
    FeatureFileSource,
    GaussianFeatureSource,
    PosteriorVarianceScorer,
    ScratchCounter,
    SelectionResult,
    Shortlist,
    committee_scores,
    dense_pv_scores,
    greedy_select,
    lcmd_select,
    random_select,
    stream_shortlist,
)
from .harness import (
    ALConfig,
    BiasSpec,
    PathwaySpec,
    RoundLog,
    al_loop,
    auc,
    biased_pool,
    build_benchmark,
    compute_metrics,
    generate_pathways,
)
from .kernels import (
    ActivationFeatures,
    BitVector,
    EnergyGradientFeatures,
    ForceGradientFeatures,
    JointGradientFeatures,
    cosine_normalize,
    force_rms_feature,
    joint_feature,
    load_features,
    make_feature_map,
    save_features,
    tanimoto,
)
from .potential import (
    DescriptorConfig,
    ModelParams,
    NeuralPotential,
    TrainingSchedule,
    energy,
    energy_and_forces,
    energy_param_gradient,
    force_param_jacobian,
    forces,
    load_params,
    pooled_activations,
    save_params,
    train,
)
from .structures import LabeledStructure, Structure, load_xyz, save_xyz
from .validation import NumericalError, ValidationError

__version__ = "0.1.0"
