use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{
    backward, batch_loss, frobenius_norm, gradient_histogram, DiagnosticsLog, EpochRecord,
    GradientRecord, HistogramSnapshot,
};
use crate::linalg::Matrix;
use crate::network::{forward, init_params, NetworkConfig, Params};
use crate::pointset::PointSet;

use super::lbfgs::{lbfgs_minimize_with, LbfgsOptions, Termination};

/// Loss ratio over the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Snapshot {
    Epoch(usize),
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lbfgs: LbfgsOptions,
    pub snapshots: Vec<Snapshot>,
    pub histogram_bins: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions::default(),
            snapshots: vec![Snapshot::Epoch(100), Snapshot::Epoch(1000), Snapshot::Last],
            histogram_bins: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub params: Params,
    pub epochs: usize,
    pub termination: Termination,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub log: DiagnosticsLog,
    pub wall_seconds: f64,
}

/// Full-batch training data as network inputs and labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Matrix,
}

impl Batch {
    pub fn from_point_set(ps: &PointSet) -> Self {
        let pts = ps.positions();
        let inputs = Matrix::from_fn(3, pts.len(), |r, c| pts[c].to_array()[r]);
        let labels = Matrix::from_row_major(1, pts.len(), ps.labels());
        Self { inputs, labels }
    }
}

/// Loss and flattened backprop gradient at a flat parameter vector.
pub struct Objective<'a> {
    config: &'a NetworkConfig,
    batch: &'a Batch,
    scratch: Params,
}

impl<'a> Objective<'a> {
    pub fn new(config: &'a NetworkConfig, batch: &'a Batch) -> Self {
        Self { config, batch, scratch: Params::zeros(config) }
    }

    /// A parameter point whose forward pass overflows evaluates to an
    /// infinite loss so the line search can back off.
    pub fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.scratch.assign(x)?;
        let (pred, trace) = match forward(self.config, &self.scratch, &self.batch.inputs) {
            Ok(v) => v,
            Err(Error::NonFiniteActivation { .. }) => {
                return Ok((f64::INFINITY, vec![f64::NAN; x.len()]))
            }
            Err(e) => return Err(e),
        };
        let loss = batch_loss(&pred, &self.batch.labels)?;
        let grad = backward(self.config, &self.scratch, &trace, &self.batch.labels)?;
        Ok((loss, grad.flatten()))
    }
}

/// Mean squared error of `params` on a point set.
pub fn evaluate_loss(config: &NetworkConfig, params: &Params, ps: &PointSet) -> Result<f64> {
    let batch = Batch::from_point_set(ps);
    let (pred, _) = forward(config, params, &batch.inputs)?;
    batch_loss(&pred, &batch.labels)
}

/// Trains from Glorot-initialized parameters.
pub fn train(config: &NetworkConfig, train_set: &PointSet, opts: &TrainOptions) -> Result<TrainReport> {
    let params = init_params(config)?;
    train_from(config, params, train_set, opts)
}

/// One epoch is one full-batch L-BFGS iteration.
pub fn train_from(
    config: &NetworkConfig,
    params: Params,
    train_set: &PointSet,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    config.validate()?;
    params.check_shapes(config)?;
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if config.input_dim != 3 || config.output_dim != 1 {
        return Err(Error::InvalidParameter(
            "surface training needs input_dim 3 and output_dim 1".into(),
        ));
    }
    if opts.histogram_bins == 0 {
        return Err(Error::InvalidParameter("histogram_bins must be >= 1".into()));
    }
    let start = Instant::now();
    let batch = Batch::from_point_set(train_set);
    let mut objective = Objective::new(config, &batch);
    let x0 = params.flatten();
    let (initial_loss, _) = objective.evaluate(&x0)?;

    let epochs_wanted: Vec<usize> = opts
        .snapshots
        .iter()
        .filter_map(|s| match s {
            Snapshot::Epoch(e) => Some(*e),
            Snapshot::Last => None,
        })
        .collect();
    let want_last = opts.snapshots.contains(&Snapshot::Last);

    let mut log = DiagnosticsLog::default();
    let mut weights = params.clone();
    let result = lbfgs_minimize_with(
        |x| objective.evaluate(x),
        &x0,
        &opts.lbfgs,
        |it| {
            weights.assign(it.x)?;
            log.epochs.push(EpochRecord {
                epoch: it.iteration,
                loss: it.loss,
                frobenius_norm: frobenius_norm(&weights),
            });
            if it.loss > DIVERGENCE_FACTOR * initial_loss {
                return Err(Error::DivergenceDetected {
                    epoch: it.iteration,
                    loss: it.loss,
                    initial: initial_loss,
                });
            }
            if epochs_wanted.contains(&it.iteration) {
                snapshot(config, it.iteration, it.grad, opts.histogram_bins, &mut log)?;
            }
            Ok(())
        },
    )?;

    let epochs = result.iterations();
    if want_last && !epochs_wanted.contains(&epochs) {
        snapshot(config, epochs, &result.grad, opts.histogram_bins, &mut log)?;
    }
    let final_params = Params::unflatten(config, &result.x)?;
    Ok(TrainReport {
        params: final_params,
        epochs,
        termination: result.termination,
        initial_loss,
        final_loss: result.loss,
        log,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn snapshot(
    config: &NetworkConfig,
    epoch: usize,
    grad: &[f64],
    bins: usize,
    log: &mut DiagnosticsLog,
) -> Result<()> {
    let record = GradientRecord::unflatten(config, grad)?;
    for layer in 1..=record.layers.len() {
        let histogram = gradient_histogram(&record, layer, bins)?;
        log.histograms.push(HistogramSnapshot { epoch, layer, histogram });
    }
    Ok(())
}
