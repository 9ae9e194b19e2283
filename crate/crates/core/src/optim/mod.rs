//! Full-batch L-BFGS training of the surface network.

mod lbfgs;
mod train;

pub use lbfgs::{
    lbfgs_minimize, lbfgs_minimize_with, Iterate, LbfgsOptions, LbfgsResult, Termination,
};
pub use train::{
    evaluate_loss, train, train_from, Batch, Objective, Snapshot, TrainOptions, TrainReport,
    DIVERGENCE_FACTOR,
};
