//! Mean-squared-error gradients by reverse-mode backpropagation, a central
//! finite-difference oracle, and the optimization diagnostics (weight norm
//! trace, gradient histograms).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{forward, ArchitectureKind, ForwardTrace, NetworkConfig, Params};

/// Step used by the finite-difference oracle.
pub const FD_STEP: f64 = 1e-6;

/// `(1/n) * sum (label - prediction)^2`.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = predictions.iter().zip(labels).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Batch loss `(1/n) * sum_i ||y_i - M(p_i)||^2` for `D x n` matrices.
pub fn batch_loss(predictions: &Matrix, labels: &Matrix) -> Result<f64> {
    if predictions.shape() != labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "predictions {:?} vs labels {:?}",
            predictions.shape(),
            labels.shape()
        )));
    }
    let n = predictions.cols();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let sum: f64 = predictions
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .map(|(p, y)| (y - p) * (y - p))
        .sum();
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Loss gradient with the same layout as [`Params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub layers: Vec<LayerGradient>,
}

impl GradientRecord {
    /// Same ordering as [`Params::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(config: &NetworkConfig, flat: &[f64]) -> Result<Self> {
        let p = Params::unflatten(config, flat)?;
        Ok(Self {
            layers: p
                .layers
                .into_iter()
                .map(|l| LayerGradient { weights: l.weights, bias: l.bias })
                .collect(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.all_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Exact gradient of [`batch_loss`] through the traced forward pass.
///
/// For every layer the weight gradient is the batch sum of outer products
/// `dL/dZ(h) (x) p(h-1)`. Skip terms add their own derivative to `dL/dZ(h)`
/// (`Hw`: identity, `SqrHw`: `2 Z`) or to `dL/dp(h-1)` (`Res`).
pub fn backward(
    config: &NetworkConfig,
    params: &Params,
    trace: &ForwardTrace,
    labels: &Matrix,
) -> Result<GradientRecord> {
    let n_layers = config.num_layers();
    if params.layers.len() != n_layers
        || trace.num_layers() != n_layers
        || trace.activations.len() != n_layers + 1
        || trace.nonlinear.len() != n_layers - 1
        || trace.skips.len() != n_layers
    {
        return Err(Error::TraceMismatch(format!(
            "network has {n_layers} layers, trace has {}",
            trace.num_layers()
        )));
    }
    for (h, (layer, z)) in params.layers.iter().zip(&trace.pre_activations).enumerate() {
        if z.rows() != layer.weights.rows() || z.cols() != trace.batch_size() {
            return Err(Error::TraceMismatch(format!("layer {} pre-activation shape", h + 1)));
        }
        if config.is_skip_layer(h + 1) != trace.skips[h].is_some() {
            return Err(Error::TraceMismatch(format!("layer {} skip term", h + 1)));
        }
    }
    let prediction = trace.prediction();
    if prediction.shape() != labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs labels {:?}",
            prediction.shape(),
            labels.shape()
        )));
    }
    let n = prediction.cols();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }

    // dL/dZ(H+1) = (2/n) (prediction - label).
    let scale = 2.0 / n as f64;
    let mut dz = Matrix::from_row_major(
        prediction.rows(),
        n,
        prediction.as_slice().iter().zip(labels.as_slice()).map(|(p, y)| scale * (p - y)).collect(),
    );

    let mut grads: Vec<LayerGradient> = Vec::with_capacity(n_layers);
    // dL/dp(h) for the layer whose dz is current; the output layer has none.
    let mut dp_out: Option<Matrix> = None;
    for idx in (0..n_layers).rev() {
        let h = idx + 1;
        let p_prev = &trace.activations[idx];
        let weights = dz.matmul_transpose(p_prev);
        let bias = (0..dz.rows()).map(|r| dz.row(r).iter().sum()).collect();
        grads.push(LayerGradient { weights, bias });
        if idx == 0 {
            break;
        }

        let mut dp_prev = params.layers[idx].weights.transpose_matmul(&dz);
        if config.kind == ArchitectureKind::Res && config.is_skip_layer(h) {
            let carried = dp_out.as_ref().expect("hidden skip layer has an upstream gradient");
            for (a, b) in dp_prev.as_mut_slice().iter_mut().zip(carried.as_slice()) {
                *a += b;
            }
        }

        // Layer h-1 produced p(h-1); push the gradient through its output.
        let below = h - 1;
        let z = trace.pre_activations[below - 1].as_slice();
        let sigma = trace.nonlinear[below - 1].as_slice();
        let skip = config.is_skip_layer(below).then_some(config.kind);
        let g = dp_prev.as_slice();
        let mut dz_below = Matrix::zeros(dp_prev.rows(), n);
        for (i, out) in dz_below.as_mut_slice().iter_mut().enumerate() {
            let mut d = g[i] * (1.0 - sigma[i] * sigma[i]);
            match skip {
                Some(ArchitectureKind::Hw) => d += g[i],
                Some(ArchitectureKind::SqrHw) => d += 2.0 * z[i] * g[i],
                _ => {}
            }
            *out = d;
        }
        dz = dz_below;
        dp_out = Some(dp_prev);
    }
    grads.reverse();
    Ok(GradientRecord { layers: grads })
}

/// Central differences `(L(x + h e_k) - L(x - h e_k)) / 2h` for every parameter.
pub fn finite_diff_gradient(
    config: &NetworkConfig,
    params: &Params,
    batch: &Matrix,
    labels: &Matrix,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step {step} must be > 0")));
    }
    let base = params.flatten();
    let mut probe = params.clone();
    let mut x = base.clone();
    let mut loss_at = |x: &[f64]| -> Result<f64> {
        probe.assign(x)?;
        let (pred, _) = forward(config, &probe, batch)?;
        batch_loss(&pred, labels)
    };
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        x[k] = base[k] + step;
        let plus = loss_at(&x)?;
        x[k] = base[k] - step;
        let minus = loss_at(&x)?;
        x[k] = base[k];
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// `sqrt(sum W_ij^2)` over the weights of every layer; biases excluded.
pub fn frobenius_norm(params: &Params) -> f64 {
    params.layers.iter().map(|l| l.weights.frobenius_sq()).sum::<f64>().sqrt()
}

/// Equal-width histogram over `[edges[0], edges[bins]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Bins `values` into `bins` equal-width bins spanning their range.
    /// The maximum lands in the last bin; a constant input puts all mass
    /// in the first bin.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Histogram> {
        if bins == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
        }
        let mut counts = vec![0usize; bins];
        if values.is_empty() {
            return Ok(Histogram { edges: vec![0.0; bins + 1], counts });
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|k| if k == bins { hi } else { lo + width * k as f64 })
            .collect();
        for &v in values {
            let k = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[k] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Rows of `bin_left,bin_right,count`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{:?},{:?},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }

    pub fn from_csv(src: &str) -> Result<Histogram> {
        let mut edges = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in src.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse { line: i + 1, reason: format!("bad histogram row '{line}'") };
            if cols.len() != 3 {
                return Err(bad());
            }
            let left: f64 = cols[0].trim().parse().map_err(|_| bad())?;
            let right: f64 = cols[1].trim().parse().map_err(|_| bad())?;
            let count: usize = cols[2].trim().parse().map_err(|_| bad())?;
            if edges.is_empty() {
                edges.push(left);
            }
            edges.push(right);
            counts.push(count);
        }
        Ok(Histogram { edges, counts })
    }

    /// Median of `|x|` assuming mass is uniform inside each bin.
    pub fn abs_median_estimate(&self) -> f64 {
        let total = self.total() as f64;
        if total == 0.0 {
            return 0.0;
        }
        // Each bin maps onto one or two |x| intervals carrying its mass.
        let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
        for (k, &c) in self.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (a, b) = (self.edges[k], self.edges[k + 1]);
            let c = c as f64;
            if a >= 0.0 {
                pieces.push((a, b, c));
            } else if b <= 0.0 {
                pieces.push((-b, -a, c));
            } else {
                let neg = c * (-a) / (b - a);
                pieces.push((0.0, -a, neg));
                pieces.push((0.0, b, c - neg));
            }
        }
        let mass_below = |t: f64| -> f64 {
            pieces
                .iter()
                .map(|&(a, b, m)| {
                    if t >= b {
                        m
                    } else if t <= a {
                        0.0
                    } else {
                        m * (t - a) / (b - a)
                    }
                })
                .sum()
        };
        let mut lo = 0.0;
        let mut hi = pieces.iter().map(|p| p.1).fold(0.0, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass_below(mid) < 0.5 * total {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Histogram of `dL/dW(h)` entries for 1-based layer `layer`.
pub fn gradient_histogram(record: &GradientRecord, layer: usize, bins: usize) -> Result<Histogram> {
    let max = record.layers.len();
    if layer == 0 || layer > max {
        return Err(Error::IndexOutOfRange { index: layer, max });
    }
    Histogram::from_values(record.layers[layer - 1].weights.as_slice(), bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub frobenius_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSnapshot {
    pub epoch: usize,
    pub layer: usize,
    pub histogram: Histogram,
}

impl HistogramSnapshot {
    pub fn file_name(&self) -> String {
        histogram_file_name(self.layer, self.epoch)
    }
}

pub fn histogram_file_name(layer: usize, epoch: usize) -> String {
    format!("hist_L{layer}_E{epoch}.csv")
}

/// Per-epoch loss and weight norm plus gradient histogram snapshots.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsLog {
    pub epochs: Vec<EpochRecord>,
    pub histograms: Vec<HistogramSnapshot>,
}

impl DiagnosticsLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.frobenius_norm).collect()
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss,frobenius_norm\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:?},{:?}", e.epoch, e.loss, e.frobenius_norm);
        }
        s
    }

    pub fn parse_loss_csv(src: &str) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        for (i, line) in src.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse { line: i + 1, reason: format!("bad loss row '{line}'") };
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad());
            }
            out.push(EpochRecord {
                epoch: cols[0].trim().parse().map_err(|_| bad())?,
                loss: cols[1].trim().parse().map_err(|_| bad())?,
                frobenius_norm: cols[2].trim().parse().map_err(|_| bad())?,
            });
        }
        Ok(out)
    }

    /// Writes `loss.csv` and one `hist_L<h>_E<epoch>.csv` per snapshot.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("loss.csv"), self.loss_csv())?;
        for snap in &self.histograms {
            std::fs::write(dir.join(snap.file_name()), snap.histogram.to_csv())?;
        }
        Ok(())
    }
}

/// Population standard deviation over mean of the final `ceil(n / 10)`
/// entries (at least one).
pub fn norm_stability(norms: &[f64]) -> f64 {
    if norms.is_empty() {
        return 0.0;
    }
    let k = norms.len().div_ceil(10).max(1);
    let tail = &norms[norms.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
    var.sqrt() / mean
}
