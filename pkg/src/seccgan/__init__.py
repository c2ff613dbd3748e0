"""Co-supervised image classification with a confidence-gated conditional GAN."""

from .data import (
    AugmentPolicy,
    Dataset,
    LabeledBatch,
    NoiseLabelBatch,
    SamplerWeights,
    augment,
    compute_class_weights,
    induce_imbalance,
    load_idx,
    load_image_folder,
    sample_noise_labels,
    sample_weighted_batch,
    subset_fraction,
)
from .models import Classifier, Discriminator, Generator, NetConfig, init_params
from .objectives import (
    LossBreakdown,
    SyntheticBatch,
    bce,
    ce,
    classifier_loss,
    discriminator_loss,
    filter_qualified,
    gan_value_diagnostic,
    generator_loss,
)
from .optim import Adam
from .trainer import (
    MetricsRecord,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    load_state,
    save_state,
    train,
    train_step_baseline,
    train_step_ec_gan,
    train_step_sec_cgan,
)
from .harness import (
    ExperimentSpec,
    ResultsTable,
    emit_results_table,
    export_image_grid,
    parse_config,
    run_experiment,
)

__version__ = "0.1.0"
