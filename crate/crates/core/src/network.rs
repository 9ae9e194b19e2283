//! Plain, residual and highway-style multilayer perceptrons.
//!
//! Every hidden layer computes `Z = W p_prev + b` and `tanh(Z)`. On skip
//! layers the architecture adds a second term built from the same `Z`
//! (or from the layer input for `Res`):
//!
//! | kind    | hidden output            |
//! |---------|--------------------------|
//! | `Pn`    | `tanh(Z)`                |
//! | `Res`   | `tanh(Z) + p_prev`       |
//! | `Hw`    | `tanh(Z) + Z`            |
//! | `SqrHw` | `tanh(Z) + Z * Z`        |
//!
//! Skip layers are the hidden layers whose 1-based index is a multiple of
//! `skip_period`, excluding the first hidden layer. The output layer is
//! affine with no activation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchitectureKind {
    Pn,
    Res,
    Hw,
    SqrHw,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 4] =
        [ArchitectureKind::Pn, ArchitectureKind::Res, ArchitectureKind::Hw, ArchitectureKind::SqrHw];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::Pn => "pn",
            ArchitectureKind::Res => "res",
            ArchitectureKind::Hw => "hw",
            ArchitectureKind::SqrHw => "sqrhw",
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pn" | "plain" => Ok(ArchitectureKind::Pn),
            "res" | "residual" => Ok(ArchitectureKind::Res),
            "hw" | "highway" => Ok(ArchitectureKind::Hw),
            "sqrhw" | "square-highway" => Ok(ArchitectureKind::SqrHw),
            other => Err(Error::InvalidParameter(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: ArchitectureKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub skip_period: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// A 3-input, 1-output network with skips every other layer.
    pub fn surface(kind: ArchitectureKind, hidden_layers: usize, width: usize, seed: u64) -> Self {
        Self { kind, input_dim: 3, output_dim: 1, hidden_layers, width, skip_period: 2, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be >= 1");
        }
        if self.hidden_layers == 0 {
            return bad("at least one hidden layer is required");
        }
        if self.width == 0 {
            return bad("hidden width must be >= 1");
        }
        if self.skip_period == 0 {
            return bad("skip period must be >= 1");
        }
        if self.kind == ArchitectureKind::Res {
            let widths = self.widths();
            for h in 1..=self.hidden_layers {
                if self.is_skip_layer(h) && widths[h - 1] != widths[h] {
                    return Err(Error::InvalidParameter(format!(
                        "residual skip at layer {h} spans widths {} -> {}",
                        widths[h - 1],
                        widths[h]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Layer widths `t(0) ..= t(H+1)`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers + 2);
        w.push(self.input_dim);
        w.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        w.push(self.output_dim);
        w
    }

    /// Number of weight/bias layers, `H + 1`.
    pub fn num_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    /// Whether 1-based layer `h` carries a skip term.
    pub fn is_skip_layer(&self, h: usize) -> bool {
        self.kind != ArchitectureKind::Pn
            && h >= 2
            && h <= self.hidden_layers
            && h.is_multiple_of(self.skip_period)
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `t(h) x t(h-1)`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// All weights and biases, layer 1 first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let layers = config
            .widths()
            .windows(2)
            .map(|w| Layer { weights: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]] })
            .collect();
        Self { layers }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// Layer by layer: row-major weights, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(config: &NetworkConfig, flat: &[f64]) -> Result<Self> {
        let mut params = Params::zeros(config);
        params.assign(flat)?;
        Ok(params)
    }

    /// Overwrites every parameter from a flat vector in [`Params::flatten`] order.
    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch { left: flat.len(), right: self.num_params() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn check_shapes(&self, config: &NetworkConfig) -> Result<()> {
        let widths = config.widths();
        if self.layers.len() != widths.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter layers for a network with {}",
                self.layers.len(),
                widths.len() - 1
            )));
        }
        for (h, (l, w)) in self.layers.iter().zip(widths.windows(2)).enumerate() {
            if l.weights.shape() != (w[1], w[0]) || l.bias.len() != w[1] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {}: weights {:?} bias {} expected ({}, {}) / {}",
                    h + 1,
                    l.weights.shape(),
                    l.bias.len(),
                    w[1],
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform half-width for a `fan_in -> fan_out` layer.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, seeded from `config.seed`.
pub fn init_params(config: &NetworkConfig) -> Result<Params> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params::zeros(config);
    for l in &mut params.layers {
        let (rows, cols) = l.weights.shape();
        let a = glorot_limit(cols, rows);
        for w in l.weights.as_mut_slice() {
            *w = rng.random_range(-a..a);
        }
    }
    Ok(params)
}

/// `Z = W p_prev + b`, with `b` broadcast over the batch columns.
pub fn layer_affine(weights: &Matrix, bias: &[f64], p_prev: &Matrix) -> Result<Matrix> {
    if weights.cols() != p_prev.rows() || bias.len() != weights.rows() {
        return Err(Error::ShapeMismatch(format!(
            "W {:?}, b {}, input {:?}",
            weights.shape(),
            bias.len(),
            p_prev.shape()
        )));
    }
    let mut z = weights.matmul(p_prev);
    for (r, &b) in bias.iter().enumerate() {
        for v in z.row_mut(r) {
            *v += b;
        }
    }
    Ok(z)
}

/// Intermediates of one forward pass, indexed by layer `h - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `p(0) ..= p(H+1)`; `p(0)` is the input batch, `p(H+1)` the prediction.
    pub activations: Vec<Matrix>,
    /// Affine pre-activations `Z(1) ..= Z(H+1)`.
    pub pre_activations: Vec<Matrix>,
    /// `tanh(Z(h))` for hidden layers.
    pub nonlinear: Vec<Matrix>,
    /// The term added on skip layers, `None` elsewhere.
    pub skips: Vec<Option<Matrix>>,
}

impl ForwardTrace {
    pub fn num_layers(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].cols()
    }

    pub fn prediction(&self) -> &Matrix {
        self.activations.last().expect("trace has an output layer")
    }
}

/// Runs the network on a `d x n` batch, returning `D x n` predictions and
/// the trace needed for backpropagation.
pub fn forward(
    config: &NetworkConfig,
    params: &Params,
    batch: &Matrix,
) -> Result<(Matrix, ForwardTrace)> {
    config.validate()?;
    params.check_shapes(config)?;
    if batch.rows() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} rows, network expects {}",
            batch.rows(),
            config.input_dim
        )));
    }
    if !batch.all_finite() {
        return Err(Error::NonFiniteActivation { layer: 0 });
    }

    let n_layers = config.num_layers();
    let mut trace = ForwardTrace {
        activations: Vec::with_capacity(n_layers + 1),
        pre_activations: Vec::with_capacity(n_layers),
        nonlinear: Vec::with_capacity(n_layers - 1),
        skips: Vec::with_capacity(n_layers),
    };
    trace.activations.push(batch.clone());

    for (idx, layer) in params.layers.iter().enumerate() {
        let h = idx + 1;
        let p_prev = &trace.activations[idx];
        let z = layer_affine(&layer.weights, &layer.bias, p_prev)?;
        if h == n_layers {
            if !z.all_finite() {
                return Err(Error::NonFiniteActivation { layer: h });
            }
            trace.activations.push(z.clone());
            trace.pre_activations.push(z);
            trace.skips.push(None);
            break;
        }

        let sigma = z.map(f64::tanh);
        let skip = config.is_skip_layer(h).then(|| match config.kind {
            ArchitectureKind::Res => p_prev.clone(),
            ArchitectureKind::Hw => z.clone(),
            ArchitectureKind::SqrHw => z.map(|v| v * v),
            ArchitectureKind::Pn => unreachable!("plain networks have no skip layers"),
        });
        let mut p = sigma.clone();
        if let Some(s) = &skip {
            for (a, b) in p.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *a += b;
            }
        }
        if !p.all_finite() {
            return Err(Error::NonFiniteActivation { layer: h });
        }
        trace.pre_activations.push(z);
        trace.nonlinear.push(sigma);
        trace.skips.push(skip);
        trace.activations.push(p);
    }
    Ok((trace.prediction().clone(), trace))
}

/// Forward pass without keeping the trace.
pub fn predict(config: &NetworkConfig, params: &Params, batch: &Matrix) -> Result<Matrix> {
    forward(config, params, batch).map(|(out, _)| out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ArchitectureKind, hidden: usize, width: usize) -> NetworkConfig {
        NetworkConfig::surface(kind, hidden, width, 42)
    }

    #[test]
    fn skip_layers_are_even_hidden() {
        let c = tiny(ArchitectureKind::SqrHw, 5, 4);
        let skips: Vec<usize> = (1..=6).filter(|&h| c.is_skip_layer(h)).collect();
        assert_eq!(skips, vec![2, 4]);
        let pn = tiny(ArchitectureKind::Pn, 5, 4);
        assert!((1..=6).all(|h| !pn.is_skip_layer(h)));
        let every = NetworkConfig { skip_period: 1, ..c };
        assert_eq!((1..=6).filter(|&h| every.is_skip_layer(h)).count(), 4);
    }

    #[test]
    fn config_validation() {
        let ok = tiny(ArchitectureKind::Res, 2, 3);
        assert!(ok.validate().is_ok());
        assert!(NetworkConfig { hidden_layers: 0, ..ok.clone() }.validate().is_err());
        assert!(NetworkConfig { width: 0, ..ok.clone() }.validate().is_err());
        assert!(NetworkConfig { skip_period: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let c = tiny(ArchitectureKind::Pn, 3, 50);
        let a = init_params(&c).unwrap();
        assert_eq!(a, init_params(&c).unwrap());
        let limit = glorot_limit(50, 50);
        assert!((limit - 0.2449489742783178).abs() < 1e-15);
        for w in a.layers[1].weights.as_slice() {
            assert!(w.abs() < limit);
        }
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let other = init_params(&NetworkConfig { seed: 43, ..c }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn flatten_unflatten_identity() {
        let c = tiny(ArchitectureKind::Hw, 2, 5);
        let p = init_params(&c).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), c.num_params());
        assert_eq!(flat.len(), 3 * 5 + 5 + 5 * 5 + 5 + 5 + 1);
        assert_eq!(Params::unflatten(&c, &flat).unwrap(), p);
        assert!(Params::unflatten(&c, &flat[1..]).is_err());
    }

    #[test]
    fn affine_examples() {
        let z = layer_affine(&Matrix::zeros(2, 3), &[0.0, 0.0], &Matrix::zeros(3, 4)).unwrap();
        assert_eq!(z, Matrix::zeros(2, 4));
        let p = Matrix::from_row_major(2, 1, vec![2.0, 3.0]);
        let z = layer_affine(&Matrix::identity(2), &[1.0, 1.0], &p).unwrap();
        assert_eq!(z.as_slice(), &[3.0, 4.0]);
        assert!(matches!(
            layer_affine(&Matrix::identity(2), &[1.0, 1.0], &Matrix::zeros(3, 1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_params_predict_zero() {
        let c = tiny(ArchitectureKind::Pn, 3, 6);
        let batch = Matrix::from_fn(3, 5, |r, col| (r as f64 - col as f64) * 0.3);
        let out = predict(&c, &Params::zeros(&c), &batch).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sqrhw_hand_example() {
        // One hidden layer of width 1 with the skip forced on via a two-layer
        // stack whose second hidden layer is the checked one.
        let c = NetworkConfig {
            kind: ArchitectureKind::SqrHw,
            input_dim: 3,
            output_dim: 1,
            hidden_layers: 2,
            width: 1,
            skip_period: 2,
            seed: 0,
        };
        let mut params = Params::zeros(&c);
        // Layer 1 passes x1 through tanh; compensate with atanh so layer 2
        // sees exactly 0.5.
        params.layers[0].weights = Matrix::from_row_major(1, 3, vec![1.0, 0.0, 0.0]);
        params.layers[1].weights = Matrix::from_row_major(1, 1, vec![1.0]);
        params.layers[2].weights = Matrix::from_row_major(1, 1, vec![1.0]);
        let x = 0.5f64.atanh();
        let batch = Matrix::from_row_major(3, 1, vec![x, 0.0, 0.0]);
        let (out, trace) = forward(&c, &params, &batch).unwrap();
        let expected = 0.5f64.tanh() + 0.25;
        assert!((expected - 0.7121172).abs() < 1e-7);
        assert!((out.get(0, 0) - expected).abs() < 1e-15);
        assert_eq!(trace.activations[2].get(0, 0), out.get(0, 0));
    }

    #[test]
    fn hw_equals_pn_when_z_vanishes() {
        let pn = tiny(ArchitectureKind::Pn, 2, 3);
        let hw = NetworkConfig { kind: ArchitectureKind::Hw, ..pn.clone() };
        let mut params = init_params(&pn).unwrap();
        // Zero second-layer weights: Z(2) = 0 for any input.
        params.layers[1].weights = Matrix::zeros(3, 3);
        let batch = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.1 - 0.5);
        let (a, ta) = forward(&pn, &params, &batch).unwrap();
        let (b, tb) = forward(&hw, &params, &batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.activations[2], tb.activations[2]);
    }

    #[test]
    fn shared_pre_activation_in_trace() {
        let batch = Matrix::from_fn(3, 6, |r, c| ((r + 2 * c) as f64 * 0.37).sin());
        for kind in [ArchitectureKind::Hw, ArchitectureKind::SqrHw, ArchitectureKind::Res] {
            let c = tiny(kind, 4, 5);
            let params = init_params(&c).unwrap();
            let (_, t) = forward(&c, &params, &batch).unwrap();
            assert_eq!(t.num_layers(), 5);
            assert_eq!(t.activations[0], batch);
            for h in [2usize, 4] {
                let z = &t.pre_activations[h - 1];
                let s = t.skips[h - 1].as_ref().unwrap();
                let expected = match kind {
                    ArchitectureKind::Hw => z.clone(),
                    ArchitectureKind::SqrHw => z.map(|v| v * v),
                    _ => t.activations[h - 1].clone(),
                };
                assert_eq!(s, &expected);
                assert_eq!(&t.nonlinear[h - 1], &z.map(f64::tanh));
            }
            assert!(t.skips[0].is_none() && t.skips[2].is_none() && t.skips[4].is_none());
        }
    }

    #[test]
    fn batch_equals_per_point() {
        let batch = Matrix::from_fn(3, 9, |r, c| ((r * 9 + c) as f64 * 0.71).cos());
        for kind in ArchitectureKind::ALL {
            let c = tiny(kind, 3, 7);
            let params = init_params(&c).unwrap();
            let all = predict(&c, &params, &batch).unwrap();
            for col in 0..batch.cols() {
                let single = predict(&c, &params, &batch.columns(col, col + 1)).unwrap();
                assert_eq!(single.get(0, 0).to_bits(), all.get(0, col).to_bits());
            }
        }
    }

    #[test]
    fn shape_errors() {
        let c = tiny(ArchitectureKind::Pn, 1, 2);
        let params = Params::zeros(&c);
        assert!(matches!(
            forward(&c, &params, &Matrix::zeros(2, 1)),
            Err(Error::ShapeMismatch(_))
        ));
        let wrong = Params::zeros(&tiny(ArchitectureKind::Pn, 2, 2));
        assert!(matches!(forward(&c, &wrong, &Matrix::zeros(3, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn non_finite_detected() {
        let c = tiny(ArchitectureKind::SqrHw, 2, 1);
        let mut params = Params::zeros(&c);
        params.layers[0].bias = vec![1.0];
        params.layers[1].weights = Matrix::from_row_major(1, 1, vec![1e200]);
        let err = forward(&c, &params, &Matrix::zeros(3, 1)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteActivation { layer: 2 }));
    }
}
