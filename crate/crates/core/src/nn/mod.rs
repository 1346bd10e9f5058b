//! Layer specifications, trainable networks, optimizers and losses.

pub mod loss;
mod network;
mod optim;
mod spec;
mod gradcheck;
mod train;

pub use loss::{
    cross_entropy, discriminator_loss, discriminator_loss_graph, external_classifier_loss,
    external_classifier_loss_graph, generator_loss, generator_loss_graph, GeneratorLossMode,
};
pub use network::{Forward, Network, ParamMode};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use spec::{
    InceptionBranch, LayerSpec, NetworkSpec, OutputKind,
    CLASSIFIER_PRESETS, IMAGE_SHAPE,
};
pub use gradcheck::{
    gradcheck_case_names, gradcheck_suite, GradCheckOptions, GradCheckRecord, GRADCHECK_SEEDS,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use train::{
    argmax, classifier_step, evaluate_accuracy, mean_loss, predict_classes, train_epoch, EpochLoss,
    DEFAULT_BATCH_SIZE, DEFAULT_CLASSIFIER_LR,
};
