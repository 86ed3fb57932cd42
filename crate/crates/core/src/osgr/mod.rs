//! Open-set gesture recognition: neighbor-loss training against a feature
//! bank, KNN candidates and the adaptive rejection threshold.

mod bank;
mod decision;
mod loss;
mod model;
mod train;

pub use bank::{read_wfdb, write_wfdb, FeatureBank, BANK_NORM_TOL, WFDB_MAGIC, WFDB_VERSION};
pub use decision::{compute_threshold, decide, knn_candidate, nearest, same_class_spread, Candidate, Decision};
pub use loss::{
    construction_loss, cosine_sim, neighbor_loss_and_grad, neighbor_probs, total_loss, NeighborLoss, PROB_FLOOR,
    UNIT_TOL,
};
pub use model::{DecisionModel, BANK_FILE, MODEL_FILE, SIDECAR_FILE};
pub use train::{train, BankMode, EpochStats, TrainConfig, TrainHistory, TrainOutcome, TrainSample};
