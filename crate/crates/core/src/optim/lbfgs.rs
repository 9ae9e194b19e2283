use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_epochs: usize,
    /// Stop when the projected gradient's infinity norm is at most this.
    pub grad_tol: f64,
    /// Stop when `|f_k - f_k+1| <= loss_tol * max(|f_k|, |f_k+1|)`.
    pub loss_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Trial steps allowed per line search.
    pub max_line_search: usize,
    /// After a Wolfe step is found, also try the cubic-interpolated
    /// minimizer along the line and keep it if it is a better Wolfe point.
    /// Makes the line search exact on quadratics.
    pub refine_step: bool,
    /// Optional per-coordinate `[lo, hi]` box.
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_epochs: 1000,
            grad_tol: 1e-8,
            loss_tol: 1e-10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 20,
            refine_step: true,
            bounds: None,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.memory == 0 {
            return bad("L-BFGS memory must be >= 1".into());
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return bad(format!("need 0 < c1 < c2 < 1, got c1={} c2={}", self.c1, self.c2));
        }
        if self.max_line_search == 0 {
            return bad("line search needs at least one trial".into());
        }
        if !(self.grad_tol >= 0.0 && self.loss_tol >= 0.0) {
            return bad("tolerances must be >= 0".into());
        }
        if let Some(b) = &self.bounds {
            if b.len() != dim {
                return Err(Error::LengthMismatch { left: b.len(), right: dim });
            }
            if let Some((i, _)) = b.iter().enumerate().find(|(_, (lo, hi))| !(lo <= hi)) {
                return bad(format!("bound {i} has lo > hi"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    LossTol,
    MaxEpochs,
    LineSearchFail,
}

/// State after an accepted iteration, handed to the progress callback.
#[derive(Debug)]
pub struct Iterate<'a> {
    /// 1-based iteration count.
    pub iteration: usize,
    pub x: &'a [f64],
    pub loss: f64,
    pub grad: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Loss after each accepted iteration.
    pub history: Vec<f64>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl LbfgsResult {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

pub fn lbfgs_minimize<F>(objective: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_minimize_with(objective, x0, opts, |_| Ok(()))
}

/// L-BFGS (two-loop recursion) with a strong-Wolfe line search. With
/// bounds, coordinates held at a bound by the gradient are frozen and the
/// line search is capped at the first bound the direction reaches.
///
/// An objective value that is not finite at a trial point is treated as a
/// failed sufficient-decrease test; at `x0` it is an error. The callback
/// runs after every accepted iteration and may abort by returning an error.
pub fn lbfgs_minimize_with<F, C>(
    mut objective: F,
    x0: &[f64],
    opts: &LbfgsOptions,
    mut callback: C,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(&Iterate<'_>) -> Result<()>,
{
    let n = x0.len();
    opts.validate(n)?;
    let bounds = Bounds(opts.bounds.as_deref());

    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    if !f.is_finite() || g.len() != n || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }

    let mut history = Vec::new();
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let finish = |x, f, g, history, termination, evaluations| LbfgsResult {
        x,
        loss: f,
        grad: g,
        history,
        termination,
        evaluations,
    };

    if inf_norm(&bounds.projected_gradient(&x, &g)) <= opts.grad_tol {
        return Ok(finish(x, f, g, history, Termination::GradTol, evaluations));
    }
    if opts.max_epochs == 0 {
        return Ok(finish(x, f, g, history, Termination::MaxEpochs, evaluations));
    }

    loop {
        let frozen = bounds.frozen(&x, &g);
        let masked: Vec<f64> = g.iter().zip(&frozen).map(|(&v, &fz)| if fz { 0.0 } else { v }).collect();
        let mut d = two_loop(&masked, &pairs);
        bounds.restrict_direction(&x, &frozen, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
            // Not a descent direction: drop the memory and use steepest descent.
            pairs.clear();
            d = masked.iter().map(|v| -v).collect();
            bounds.restrict_direction(&x, &frozen, &mut d);
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                return Ok(finish(x, f, g, history, Termination::GradTol, evaluations));
            }
        }
        let alpha_max = bounds.max_step(&x, &d);
        let alpha0 = if pairs.is_empty() { (1.0 / norm2(&d)).min(1.0) } else { 1.0 };

        let search = LineSearch {
            x: &x,
            d: &d,
            f0: f,
            slope,
            alpha_max,
            opts,
            bounds,
        };
        let step = search.run(&mut objective, alpha0)?;
        evaluations += step.evaluations;
        let Some(accepted) = step.accepted else {
            return Ok(finish(x, f, g, history, Termination::LineSearchFail, evaluations));
        };

        debug_assert!(
            accepted.f <= f + opts.c1 * accepted.alpha * slope + 1e-12 * f.abs().max(1.0),
            "accepted step violates sufficient decrease"
        );
        debug_assert!(
            accepted.at_bound || dot(&accepted.g, &d).abs() <= opts.c2 * slope.abs() * (1.0 + 1e-9),
            "accepted step violates the curvature condition"
        );

        let s: Vec<f64> = accepted.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = accepted.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > f64::EPSILON * yy && yy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back(Pair { rho: 1.0 / sy, gamma: sy / yy, s, y });
        }

        let f_prev = f;
        x = accepted.x;
        f = accepted.f;
        g = accepted.g;
        history.push(f);
        callback(&Iterate { iteration: history.len(), x: &x, loss: f, grad: &g })?;

        if inf_norm(&bounds.projected_gradient(&x, &g)) <= opts.grad_tol {
            return Ok(finish(x, f, g, history, Termination::GradTol, evaluations));
        }
        if (f_prev - f).abs() <= opts.loss_tol * f_prev.abs().max(f.abs()) {
            return Ok(finish(x, f, g, history, Termination::LossTol, evaluations));
        }
        if history.len() >= opts.max_epochs {
            return Ok(finish(x, f, g, history, Termination::MaxEpochs, evaluations));
        }
    }
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
    gamma: f64,
}

/// `-H g` with `H` the limited-memory inverse Hessian, `H0 = gamma I`.
fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, p) in pairs.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, &q);
        alphas[k] = a;
        axpy(-a, &p.y, &mut q);
    }
    let gamma = pairs.back().map_or(1.0, |p| p.gamma);
    for v in &mut q {
        *v *= gamma;
    }
    for (k, p) in pairs.iter().enumerate() {
        let b = p.rho * dot(&p.y, &q);
        axpy(alphas[k] - b, &p.s, &mut q);
    }
    for v in &mut q {
        *v = -*v;
    }
    q
}

#[derive(Clone, Copy)]
struct Bounds<'a>(Option<&'a [(f64, f64)]>);

impl Bounds<'_> {
    fn project(&self, x: &mut [f64]) {
        if let Some(b) = self.0 {
            for (v, &(lo, hi)) in x.iter_mut().zip(b) {
                *v = v.clamp(lo, hi);
            }
        }
    }

    /// Coordinates sitting on a bound with the gradient pushing outward.
    fn frozen(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        match self.0 {
            None => vec![false; x.len()],
            Some(b) => x
                .iter()
                .zip(g)
                .zip(b)
                .map(|((&v, &gv), &(lo, hi))| (v <= lo && gv > 0.0) || (v >= hi && gv < 0.0))
                .collect(),
        }
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let frozen = self.frozen(x, g);
        g.iter().zip(frozen).map(|(&v, fz)| if fz { 0.0 } else { v }).collect()
    }

    /// Zeroes frozen components and any that point out of the box.
    fn restrict_direction(&self, x: &[f64], frozen: &[bool], d: &mut [f64]) {
        let Some(b) = self.0 else { return };
        for i in 0..d.len() {
            let (lo, hi) = b[i];
            if frozen[i] || (x[i] <= lo && d[i] < 0.0) || (x[i] >= hi && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
    }

    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let Some(b) = self.0 else { return f64::INFINITY };
        let mut alpha = f64::INFINITY;
        for i in 0..x.len() {
            let (lo, hi) = b[i];
            if d[i] < 0.0 && lo.is_finite() {
                alpha = alpha.min((lo - x[i]) / d[i]);
            } else if d[i] > 0.0 && hi.is_finite() {
                alpha = alpha.min((hi - x[i]) / d[i]);
            }
        }
        alpha
    }
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
    at_bound: bool,
}

struct LineSearchOutcome {
    accepted: Option<Trial>,
    evaluations: usize,
}

struct LineSearch<'a> {
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope: f64,
    alpha_max: f64,
    opts: &'a LbfgsOptions,
    bounds: Bounds<'a>,
}

impl LineSearch<'_> {
    fn eval<F>(&self, objective: &mut F, alpha: f64) -> Result<Trial>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let mut x: Vec<f64> = self.x.iter().zip(self.d).map(|(a, b)| a + alpha * b).collect();
        self.bounds.project(&mut x);
        let (mut f, g) = objective(&x)?;
        let finite = g.len() == x.len() && g.iter().all(|v| v.is_finite());
        if !finite {
            f = f64::INFINITY;
        }
        let slope = if finite { dot(&g, self.d) } else { f64::NAN };
        Ok(Trial { alpha, x, f, g, slope, at_bound: alpha >= self.alpha_max })
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f.is_finite() && t.f <= self.f0 + self.opts.c1 * t.alpha * self.slope
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= self.opts.c2 * self.slope.abs()
    }

    fn run<F>(&self, objective: &mut F, alpha0: f64) -> Result<LineSearchOutcome>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let budget = self.opts.max_line_search;
        let mut evals = 0;
        let origin = Trial {
            alpha: 0.0,
            x: self.x.to_vec(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope,
            at_bound: false,
        };
        let mut prev = origin;
        let mut alpha = alpha0.min(self.alpha_max);
        if !(alpha > 0.0) {
            return Ok(LineSearchOutcome { accepted: None, evaluations: 0 });
        }

        let accepted = loop {
            if evals >= budget {
                break None;
            }
            let t = self.eval(objective, alpha)?;
            evals += 1;
            if !self.armijo(&t) || (prev.alpha > 0.0 && t.f >= prev.f) {
                break self.zoom(objective, prev, t, &mut evals)?;
            }
            if self.curvature(&t) {
                break Some(t);
            }
            if t.slope >= 0.0 {
                break self.zoom(objective, t, prev, &mut evals)?;
            }
            if t.at_bound {
                // Still descending when the box stops the step.
                break Some(t);
            }
            let next = extrapolate(&prev, &t).min(self.alpha_max);
            prev = t;
            alpha = next;
        };

        let accepted = match accepted {
            Some(t) if self.opts.refine_step && !t.at_bound && evals < budget => {
                Some(self.refine(objective, t, &mut evals)?)
            }
            other => other,
        };
        Ok(LineSearchOutcome { accepted, evaluations: evals })
    }

    /// Narrows a bracket whose `lo` end satisfies sufficient decrease.
    fn zoom<F>(
        &self,
        objective: &mut F,
        mut lo: Trial,
        mut hi: Trial,
        evals: &mut usize,
    ) -> Result<Option<Trial>>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        while *evals < self.opts.max_line_search {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b {
                return Ok(None);
            }
            let guess = if hi.f.is_finite() { cubic_min(&lo, &hi) } else { None };
            let alpha = match guess {
                Some(c) if c > a + 0.1 * width && c < b - 0.1 * width => c,
                _ => 0.5 * (a + b),
            };
            let t = self.eval(objective, alpha)?;
            *evals += 1;
            if !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Ok(Some(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
        }
        Ok(None)
    }

    fn refine<F>(&self, objective: &mut F, t: Trial, evals: &mut usize) -> Result<Trial>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let origin = Trial {
            alpha: 0.0,
            x: Vec::new(),
            f: self.f0,
            g: Vec::new(),
            slope: self.slope,
            at_bound: false,
        };
        let Some(c) = cubic_min(&origin, &t) else { return Ok(t) };
        let upper = (4.0 * t.alpha).min(self.alpha_max);
        if !(c > 0.0 && c < upper) || (c - t.alpha).abs() <= 1e-3 * t.alpha {
            return Ok(t);
        }
        let r = self.eval(objective, c)?;
        *evals += 1;
        if self.armijo(&r) && self.curvature(&r) && r.f < t.f && !r.at_bound {
            Ok(r)
        } else {
            Ok(t)
        }
    }
}

/// Minimizer of the cubic matching value and slope at both trials.
fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    let (x1, f1, g1) = (a.alpha, a.f, a.slope);
    let (x2, f2, g2) = (b.alpha, b.f, b.slope);
    if x1 == x2 || !g1.is_finite() || !g2.is_finite() {
        return None;
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (x2 - x1).signum() * disc.sqrt();
    let denom = g2 - g1 + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let c = x2 - (x2 - x1) * (g2 + d2 - d1) / denom;
    c.is_finite().then_some(c)
}

/// Next trial when the current one is still descending steeply.
fn extrapolate(prev: &Trial, cur: &Trial) -> f64 {
    let lo = 1.1 * cur.alpha;
    let hi = 4.0 * cur.alpha;
    match cubic_min(prev, cur) {
        Some(c) if c > lo && c < hi => c,
        _ => 2.0 * cur.alpha,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
