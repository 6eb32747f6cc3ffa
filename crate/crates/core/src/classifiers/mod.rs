//! Softmax classifiers: RFF features with a linear head, and a dense
//! encoder transferred from a source task.

pub mod categorical;
pub mod mlp;
pub mod predict;
pub mod rff_classifier;
pub mod transfer;

pub use categorical::{categorical_loglik, categorical_loglik_from_logits, log_softmax_rows, softmax_rows};
pub use mlp::MlpEncoder;
pub use predict::{predict_mc, predict_point, ClassifierModel};
pub use rff_classifier::{fit_map_grid_search_rff_classifier, fit_rff_classifier, RffClassifierLikelihood};
pub use transfer::{
    fit_de_elbo_classifier, fit_map_grid_search_classifier, generate_transfer_task, pretrain_backbone,
    PretrainOptions, PretrainedBackbone, PriorSpec, PriorVariant, ToyTransferModel, TransferLikelihood, TransferTask,
    TransferTaskConfig,
};
