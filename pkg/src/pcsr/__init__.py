"""Point cloud super-resolution toolkit.

A generator built from residual graph convolutions progressively doubles a
point cloud, a graph patch discriminator scores local regions of the
result, and training combines a one-sided Chamfer coverage loss with a
least-squares adversarial loss in two phases. Ships with synthetic
parametric-surface data, a geometric metric suite and a CLI.
"""

from .autodiff import Parameter, Tensor, backward
from .data import (
    AugmentConfig,
    Patch,
    augment,
    extract_patch,
    make_surface,
    read_cloud,
    sample_surface,
    subsample_input,
    write_cloud,
)
from .discriminator import DiscriminatorConfig, DiscriminatorModel, PoolBlockConfig
from .generator import (
    FeatureNetConfig,
    GeneratorConfig,
    GeneratorModel,
    ResidualBlockConfig,
)
from .geometry import (
    NeighborIndex,
    PointCloud,
    SampleIndex,
    farthest_point_sample,
    gather,
    knn_indices,
    knn_query,
)
from .loss import (
    LossConfig,
    chamfer_one_sided,
    chamfer_reverse,
    discriminator_loss,
    generator_adv_loss,
    joint_loss,
)
from .metrics import MetricReport, cd_metric, deviation, emd_metric, evaluate, fscore, uniformity_nuc
from .training import (
    AdamState,
    NumericalError,
    TrainConfig,
    Trainer,
    TrainerState,
    adam_step,
    init_trainer,
    load_checkpoint,
    save_checkpoint,
    train_phase1,
    train_phase2,
)

__version__ = "0.1.0"
