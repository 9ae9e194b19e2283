//! Reference implementations used as oracles by the integration tests.
//! Written with plain loops and no library numerics.

#![allow(dead_code)]

use neusurf::network::{ArchitectureKind, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar forward pass over a flat parameter vector (per layer: row-major
/// weights, then biases).
pub fn naive_forward(config: &NetworkConfig, flat: &[f64], x: &[f64]) -> Vec<f64> {
    let mut widths = vec![config.input_dim];
    widths.extend(std::iter::repeat_n(config.width, config.hidden_layers));
    widths.push(config.output_dim);
    let mut at = 0;
    let mut p = x.to_vec();
    for layer in 1..widths.len() {
        let (n_in, n_out) = (widths[layer - 1], widths[layer]);
        let w = &flat[at..at + n_in * n_out];
        let b = &flat[at + n_in * n_out..at + n_in * n_out + n_out];
        at += n_in * n_out + n_out;
        let z: Vec<f64> =
            (0..n_out).map(|r| b[r] + (0..n_in).map(|c| w[r * n_in + c] * p[c]).sum::<f64>()).collect();
        if layer == widths.len() - 1 {
            return z;
        }
        let skip = layer >= 2 && layer % config.skip_period == 0;
        p = (0..n_out)
            .map(|r| {
                let t = z[r].tanh();
                match (skip, config.kind) {
                    (false, _) | (true, ArchitectureKind::Pn) => t,
                    (true, ArchitectureKind::Res) => t + p[r],
                    (true, ArchitectureKind::Hw) => t + z[r],
                    (true, ArchitectureKind::SqrHw) => t + z[r] * z[r],
                }
            })
            .collect();
    }
    unreachable!("network has an output layer")
}

/// Mean squared error over columns of a batch stored as points.
pub fn naive_loss(config: &NetworkConfig, flat: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let d = y - naive_forward(config, flat, x)[0];
        sum += d * d;
    }
    sum / xs.len() as f64
}

/// Central-difference gradient of [`naive_loss`].
pub fn naive_fd_gradient(config: &NetworkConfig, flat: &[f64], xs: &[Vec<f64>], ys: &[f64], h: f64) -> Vec<f64> {
    let mut x = flat.to_vec();
    (0..flat.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = naive_loss(config, &x, xs, ys);
            x[i] = orig - h;
            let down = naive_loss(config, &x, xs, ys);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Seeded source of uniform test values.
pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in [-1, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.0.random_range(-1.0..1.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_f64()).collect()
    }
}

pub mod checks {
    //! Whole-suite checks shared by the focused tests and the acceptance gate.

    use super::*;
    use neusurf::grad::backward;
    use neusurf::isosurface::{marching_cubes, mesh_metrics, Reference, ScalarField};
    use neusurf::linalg::Matrix;
    use neusurf::network::{forward, Params};
    use neusurf::optim::{lbfgs_minimize, LbfgsOptions};
    use neusurf::pointset::Aabb;

    pub struct GradCase {
        pub config: NetworkConfig,
        pub flat: Vec<f64>,
        pub xs: Vec<Vec<f64>>,
        pub ys: Vec<f64>,
    }

    /// Random network (H in 1..=4, width in 2..=10), parameters, batch of at
    /// most 8 points and labels in {-1, 0, 1}.
    pub fn grad_case(kind: ArchitectureKind, skip_period: usize, rng: &mut TestRng) -> GradCase {
        let hidden = 1 + rng.below(4);
        let width = 2 + rng.below(9);
        let config = NetworkConfig {
            skip_period,
            ..NetworkConfig::surface(kind, hidden, width, 0)
        };
        let flat: Vec<f64> = rng.vec(config.num_params()).into_iter().map(|v| 0.8 * v).collect();
        let n = 1 + rng.below(8);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| rng.vec(3)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.below(3) as f64 - 1.0).collect();
        GradCase { config, flat, xs, ys }
    }

    pub fn batch_of(xs: &[Vec<f64>]) -> Matrix {
        Matrix::from_fn(3, xs.len(), |r, c| xs[c][r])
    }

    /// Analytic gradient and forward output through the library.
    pub fn library_gradient(case: &GradCase) -> (Vec<f64>, Vec<f64>) {
        let params = Params::unflatten(&case.config, &case.flat).unwrap();
        let batch = batch_of(&case.xs);
        let (out, trace) = forward(&case.config, &params, &batch).unwrap();
        let labels = Matrix::from_row_major(1, case.ys.len(), case.ys.clone());
        let g = backward(&case.config, &params, &trace, &labels).unwrap();
        (out.into_vec(), g.flatten())
    }

    /// Largest per-coordinate error between backprop and central differences
    /// of the reference forward pass, plus the largest forward mismatch.
    pub fn gradient_errors(case: &GradCase) -> (f64, f64) {
        let (out, analytic) = library_gradient(case);
        let fd = naive_fd_gradient(&case.config, &case.flat, &case.xs, &case.ys, 1e-6);
        let grad_err = analytic.iter().zip(&fd).map(|(&a, &b)| rel_err(a, b)).fold(0.0, f64::max);
        let fwd_err = case
            .xs
            .iter()
            .zip(&out)
            .map(|(x, &o)| (naive_forward(&case.config, &case.flat, x)[0] - o).abs())
            .fold(0.0, f64::max);
        (grad_err, fwd_err)
    }

    /// Worst gradient error over `count` random instances of every architecture.
    pub fn gradient_suite(count: usize, seed: u64) -> f64 {
        let mut rng = TestRng::new(seed);
        let mut worst = 0.0f64;
        for kind in ArchitectureKind::ALL {
            for _ in 0..count {
                let case = grad_case(kind, 2, &mut rng);
                let (g, f) = gradient_errors(&case);
                assert!(f <= 1e-12, "{kind} forward differs from reference by {f}");
                worst = worst.max(g);
            }
        }
        worst
    }

    /// True when every architecture gives bitwise-equal outputs and
    /// gradients once no hidden layer is a skip layer.
    pub fn degenerate_equivalence(instances: usize, seed: u64) -> bool {
        let mut rng = TestRng::new(seed);
        (0..instances).all(|_| {
            let base = grad_case(ArchitectureKind::Pn, 2, &mut rng);
            let period = base.config.hidden_layers + 1 + rng.below(3);
            let results: Vec<(Vec<f64>, Vec<f64>)> = ArchitectureKind::ALL
                .iter()
                .map(|&kind| {
                    let config = NetworkConfig { kind, skip_period: period, ..base.config.clone() };
                    library_gradient(&GradCase { config, ..clone_case(&base) })
                })
                .collect();
            results.windows(2).all(|w| {
                w[0].0.iter().zip(&w[1].0).all(|(a, b)| a.to_bits() == b.to_bits())
                    && w[0].1.iter().zip(&w[1].1).all(|(a, b)| a.to_bits() == b.to_bits())
            })
        })
    }

    fn clone_case(c: &GradCase) -> GradCase {
        GradCase { config: c.config.clone(), flat: c.flat.clone(), xs: c.xs.clone(), ys: c.ys.clone() }
    }

    /// `0.5 x^T A x - b^T x` with a random symmetric positive definite `A`.
    pub struct Quadratic {
        pub a: Vec<Vec<f64>>,
        pub b: Vec<f64>,
    }

    impl Quadratic {
        pub fn random(n: usize, rng: &mut TestRng) -> Self {
            let m: Vec<Vec<f64>> = (0..n).map(|_| rng.vec(n)).collect();
            let a = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                        .collect()
                })
                .collect();
            Self { a, b: rng.vec(n) }
        }

        pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
            let ax: Vec<f64> = self.a.iter().map(|row| row.iter().zip(x).map(|(a, x)| a * x).sum()).collect();
            let f = 0.5 * ax.iter().zip(x).map(|(a, x)| a * x).sum::<f64>()
                - self.b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
            let g = ax.iter().zip(&self.b).map(|(a, b)| a - b).collect();
            (f, g)
        }

        pub fn minimizer(&self) -> Vec<f64> {
            solve(self.a.clone(), self.b.clone())
        }
    }

    pub fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    /// Distance to the minimizer after `n + 1` iterations on a random
    /// quadratic in `n` variables.
    pub fn quadratic_exactness(n: usize, seed: u64) -> f64 {
        let mut rng = TestRng::new(seed);
        let q = Quadratic::random(n, &mut rng);
        let x0 = rng.vec(n).into_iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let opts = LbfgsOptions { max_epochs: n + 1, grad_tol: 0.0, loss_tol: 0.0, ..Default::default() };
        let r = lbfgs_minimize(|x| Ok(q.eval(x)), &x0, &opts).unwrap();
        dist(&r.x, &q.minimizer())
    }

    pub fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    /// Returns (distance to (1, 1), final value).
    pub fn rosenbrock_run() -> (f64, f64) {
        let opts = LbfgsOptions { grad_tol: 1e-12, loss_tol: 0.0, ..Default::default() };
        let r = lbfgs_minimize(|x| Ok(rosenbrock(x)), &[-1.2, 1.0], &opts).unwrap();
        (dist(&r.x, &[1.0, 1.0]), r.loss)
    }

    /// Least squares `||A x - b||^2` for a random 20 x 5 system; returns the
    /// distance to the normal-equation solution.
    pub fn least_squares(seed: u64) -> f64 {
        let mut rng = TestRng::new(seed);
        let (rows, cols) = (20, 5);
        let a: Vec<Vec<f64>> = (0..rows).map(|_| rng.vec(cols)).collect();
        let b = rng.vec(rows);
        let ata: Vec<Vec<f64>> = (0..cols)
            .map(|i| (0..cols).map(|j| (0..rows).map(|k| a[k][i] * a[k][j]).sum()).collect())
            .collect();
        let atb: Vec<f64> = (0..cols).map(|i| (0..rows).map(|k| a[k][i] * b[k]).sum()).collect();
        let exact = solve(ata, atb);
        let objective = |x: &[f64]| {
            let r: Vec<f64> =
                (0..rows).map(|k| a[k].iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - b[k]).collect();
            let f = r.iter().map(|v| v * v).sum();
            let g = (0..cols).map(|i| 2.0 * (0..rows).map(|k| a[k][i] * r[k]).sum::<f64>()).collect();
            Ok((f, g))
        };
        let opts = LbfgsOptions { grad_tol: 1e-13, loss_tol: 0.0, ..Default::default() };
        let r = lbfgs_minimize(objective, &[0.0; 5], &opts).unwrap();
        dist(&r.x, &exact)
    }

    /// Box `[0, inf)^2` on `(x1 + 1)^2 + (x2 + 1)^2`; returns the final iterate.
    pub fn box_projection() -> Vec<f64> {
        let opts = LbfgsOptions {
            bounds: Some(vec![(0.0, f64::INFINITY); 2]),
            ..Default::default()
        };
        let f = |x: &[f64]| {
            Ok(((x[0] + 1.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0), 2.0 * (x[1] + 1.0)]))
        };
        lbfgs_minimize(f, &[2.0, 3.0], &opts).unwrap().x
    }

    pub struct SphereMesh {
        pub watertight: bool,
        pub euler: i64,
        pub max_radial_error: f64,
        pub cell_diagonal: f64,
    }

    /// Unit sphere `1 - |p|` sampled on `[-1.5, 1.5]^3` with `n` nodes per axis.
    pub fn sphere_mesh(n: usize) -> SphereMesh {
        let field = ScalarField::from_fn([n, n, n], Aabb::cube(1.5), |p| 1.0 - p.norm()).unwrap();
        let mesh = marching_cubes(&field, 0.0);
        let m = mesh_metrics(&mesh, &Reference::SphereRadius(1.0)).unwrap();
        SphereMesh {
            watertight: m.watertight,
            euler: m.euler_characteristic,
            max_radial_error: m.max_error,
            cell_diagonal: field.cell_diagonal(),
        }
    }
}
