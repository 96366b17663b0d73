"""Discriminative Stein kernels for SPD matrix classification."""

from .classify import (
    Evaluation,
    KnnConfig,
    OvoSvmModel,
    evaluate,
    knn_predict,
    ovo_predict,
    ovo_train,
    paired_t_test,
)
from .criteria import (
    RadiusMarginObjective,
    alignment_objective,
    class_separability,
    ideal_kernel,
    kernel_alignment,
    radius_margin_objective,
    solve_enclosing_sphere,
    solve_svm_dual,
)
from .data import (
    LabeledDataset,
    WishartSpec,
    load_dataset,
    make_wishart_task,
    sample_wishart,
    save_dataset,
    split,
)
from .dsk import AdjustmentParams, EigStack, Mode, adjust, dsk_gradient, dsk_gram, dsk_kernel
from .errors import *  # noqa: F401,F403
from .learn import (
    DskModel,
    StoppingRule,
    cross_validate,
    fit,
    learn_alpha,
    load_model,
    save_model,
    select_theta,
    theta_grid,
)
from .spd import MetricId, SpdMatrix, make_spd, metric_distance, metric_gram, metric_kernel, s_divergence, stein_kernel

__version__ = "0.1.0"
