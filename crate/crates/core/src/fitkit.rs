//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with fixed, tied
//! and bounded parameters, stacked residual blocks and linearized standard
//! errors.
//!
//! Parameters are declared on a [`FitProblem`] together with one or more
//! residual blocks. Each block receives the *full* parameter vector (fixed
//! and tied entries already expanded) and writes unweighted residuals
//! `model - data`; the engine applies `sqrt(weight)` itself.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// How a parameter participates in the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    Free,
    Fixed,
    /// `value = scale * params[to] + offset`; `to` must not itself be tied.
    Tied { to: usize, scale: f64, offset: f64 },
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
    pub kind: ParamKind,
}

impl Parameter {
    pub fn free(name: impl Into<String>, initial: f64) -> Self {
        Self {
            name: name.into(),
            initial,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            kind: ParamKind::Free,
        }
    }

    pub fn fixed(name: impl Into<String>, value: f64) -> Self {
        Self {
            kind: ParamKind::Fixed,
            ..Self::free(name, value)
        }
    }

    pub fn tied(name: impl Into<String>, to: usize, scale: f64, offset: f64) -> Self {
        Self {
            kind: ParamKind::Tied { to, scale, offset },
            ..Self::free(name, 0.0)
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn is_free(&self) -> bool {
        matches!(self.kind, ParamKind::Free)
    }
}

type ResidualFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) -> Result<()> + Sync + 'a>;

/// One dataset's contribution to the stacked residual vector.
pub struct ResidualBlock<'a> {
    pub name: String,
    sqrt_weights: Vec<f64>,
    eval: ResidualFn<'a>,
}

impl ResidualBlock<'_> {
    pub fn len(&self) -> usize {
        self.sqrt_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_weights.is_empty()
    }
}

#[derive(Default)]
pub struct FitProblem<'a> {
    params: Vec<Parameter>,
    blocks: Vec<ResidualBlock<'a>>,
}

impl<'a> FitProblem<'a> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            blocks: Vec::new(),
        }
    }

    /// Declares a parameter and returns its index in the full vector.
    pub fn add_param(&mut self, p: Parameter) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Adds a residual block of `weights.len()` residuals. Weights are
    /// inverse variances; pass all ones for an unweighted fit.
    pub fn add_block<F>(&mut self, name: impl Into<String>, weights: Vec<f64>, eval: F) -> Result<()>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync + 'a,
    {
        let name = name.into();
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Input(format!("block {name}: invalid weight {w}")));
        }
        self.blocks.push(ResidualBlock {
            name,
            sqrt_weights: weights.iter().map(|w| w.sqrt()).collect(),
            eval: Box::new(eval),
        });
        Ok(())
    }

    /// Convenience for blocks with per-point standard deviations.
    pub fn add_block_sigma<F>(&mut self, name: impl Into<String>, sigma: &[f64], eval: F) -> Result<()>
    where
        F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync + 'a,
    {
        let name = name.into();
        if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Input(format!("block {name}: sigma must be positive, got {s}")));
        }
        let w = sigma.iter().map(|s| 1.0 / (s * s)).collect();
        self.add_block(name, w, eval)
    }

    pub fn n_residuals(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    fn free_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].is_free()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.params.iter().all(|p| !p.is_free()) {
            return Err(Error::Input("fit problem has no free parameter".into()));
        }
        if self.blocks.is_empty() || self.n_residuals() == 0 {
            return Err(Error::Input("fit problem has no residuals".into()));
        }
        for p in &self.params {
            match p.kind {
                ParamKind::Tied { to, scale, offset } => {
                    let target = self
                        .params
                        .get(to)
                        .ok_or_else(|| Error::Input(format!("{} tied to missing index {to}", p.name)))?;
                    if matches!(target.kind, ParamKind::Tied { .. }) {
                        return Err(Error::Input(format!("{} tied to tied parameter {}", p.name, target.name)));
                    }
                    if !(scale.is_finite() && offset.is_finite()) {
                        return Err(Error::Input(format!("{}: non-finite tie", p.name)));
                    }
                }
                _ => {
                    if !p.initial.is_finite() {
                        return Err(Error::Input(format!("{}: non-finite initial value", p.name)));
                    }
                    if !(p.lower <= p.initial && p.initial <= p.upper) {
                        return Err(Error::Input(format!(
                            "{}: initial {} outside bounds [{}, {}]",
                            p.name, p.initial, p.lower, p.upper
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Expands a free-parameter vector into the full parameter vector.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full: Vec<f64> = self.params.iter().map(|p| p.initial).collect();
        let mut it = free.iter();
        for (i, p) in self.params.iter().enumerate() {
            if p.is_free() {
                full[i] = *it.next().expect("free vector length");
            }
        }
        for (i, p) in self.params.iter().enumerate() {
            if let ParamKind::Tied { to, scale, offset } = p.kind {
                full[i] = scale * full[to] + offset;
            }
        }
        full
    }

    /// Weighted residual vector at the full parameter vector.
    pub fn weighted_residuals(&self, full: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_residuals()];
        let mut start = 0;
        for b in &self.blocks {
            let seg = &mut out[start..start + b.len()];
            (b.eval)(full, seg)?;
            for (r, sw) in seg.iter_mut().zip(&b.sqrt_weights) {
                *r *= sw;
            }
            if let Some(bad) = seg.iter().find(|r| !r.is_finite()) {
                return Err(Error::Input(format!("block {}: non-finite residual {bad}", b.name)));
            }
            start += b.len();
        }
        Ok(out)
    }

    fn clamp_free(&self, free_idx: &[usize], x: &mut [f64]) {
        for (k, &i) in free_idx.iter().enumerate() {
            x[k] = x[k].clamp(self.params[i].lower, self.params[i].upper);
        }
    }

    /// Forward-difference Jacobian of the weighted residuals w.r.t. the free
    /// parameters. Step is `max(1e-8, 1e-6 |p|)`, flipped at an upper bound.
    fn jacobian(&self, free_idx: &[usize], x: &[f64], r0: &[f64]) -> Result<DMatrix<f64>> {
        let m = r0.len();
        let cols: Vec<Result<Vec<f64>>> = (0..x.len())
            .into_par_iter()
            .map(|k| {
                let p = &self.params[free_idx[k]];
                let mut h = (1e-6 * x[k].abs()).max(1e-8);
                if x[k] + h > p.upper {
                    h = -h;
                }
                let mut xp = x.to_vec();
                xp[k] += h;
                let rp = self.weighted_residuals(&self.expand(&xp))?;
                Ok(rp.iter().zip(r0).map(|(a, b)| (a - b) / h).collect())
            })
            .collect();
        let mut j = DMatrix::zeros(m, x.len());
        for (k, col) in cols.into_iter().enumerate() {
            let col = col?;
            for (i, v) in col.into_iter().enumerate() {
                j[(i, k)] = v;
            }
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIter,
    Singular,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative cost change below which the fit is converged.
    pub ftol: f64,
    /// Scaled step norm below which the fit is converged.
    pub xtol: f64,
    pub initial_lambda: f64,
    /// Scale the covariance by the reduced chi-square (`false` treats the
    /// weights as exact inverse variances).
    pub scale_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-10,
            xtol: 1e-12,
            initial_lambda: 1e-3,
            scale_covariance: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    /// Full parameter vector (free, fixed and tied).
    pub params: Vec<f64>,
    /// Linearized standard errors; zero for fixed parameters.
    pub std_errors: Vec<f64>,
    /// Half the sum of squared weighted residuals.
    pub cost: f64,
    pub residual_norm: f64,
    pub status: FitStatus,
    pub iterations: usize,
    pub n_residuals: usize,
    pub n_free: usize,
    pub diagnostics: String,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.n_residuals.saturating_sub(self.n_free);
        if dof == 0 {
            0.0
        } else {
            2.0 * self.cost / dof as f64
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimizes the weighted sum of squares of `problem`.
pub fn solve(problem: &FitProblem<'_>, options: &FitOptions) -> Result<FitResult> {
    problem.validate()?;
    let free_idx = problem.free_indices();
    let n = free_idx.len();
    let mut x: Vec<f64> = free_idx.iter().map(|&i| problem.params[i].initial).collect();
    let mut r = problem.weighted_residuals(&problem.expand(&x))?;
    let mut cost = cost_of(&r);
    let cost_floor = cost * f64::EPSILON * f64::EPSILON;
    let mut lambda = options.initial_lambda;
    let mut status = FitStatus::MaxIter;
    let mut iterations = 0;

    while iterations < options.max_iter {
        iterations += 1;
        if cost == 0.0 {
            status = FitStatus::Converged;
            break;
        }
        let j = problem.jacobian(&free_idx, &x, &r)?;
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * DVector::from_column_slice(&r);
        let diag: Vec<f64> = (0..n)
            .map(|k| if jtj[(k, k)] > 0.0 { jtj[(k, k)] } else { 1.0 })
            .collect();
        let x_scale: f64 = (0..n).map(|k| diag[k] * x[k] * x[k]).sum::<f64>().sqrt();

        let mut accepted = false;
        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * diag[k];
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match a.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e20 {
                            break;
                        }
                        continue;
                    }
                },
            };
            let mut xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            problem.clamp_free(&free_idx, &mut xt);
            let rt = problem.weighted_residuals(&problem.expand(&xt))?;
            let ct = cost_of(&rt);
            if ct < cost {
                let step_norm: f64 = (0..n)
                    .map(|k| diag[k] * (xt[k] - x[k]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let rel = (cost - ct) / cost;
                x = xt;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if rel < options.ftol || cost <= cost_floor || step_norm <= options.xtol * (x_scale + options.xtol) {
                    status = FitStatus::Converged;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // No step along any damping reduces the cost: a minimum to working precision.
            status = FitStatus::Converged;
            break;
        }
        if status == FitStatus::Converged {
            break;
        }
    }

    let m = r.len();
    let mut std_errors = vec![0.0; problem.params.len()];
    let mut diagnostics = String::new();
    let j = problem.jacobian(&free_idx, &x, &r)?;
    match covariance(&j) {
        Some(cov) => {
            let s2 = if options.scale_covariance {
                if m > n {
                    2.0 * cost / (m - n) as f64
                } else {
                    0.0
                }
            } else {
                1.0
            };
            for (k, &i) in free_idx.iter().enumerate() {
                std_errors[i] = (s2 * cov[(k, k)]).max(0.0).sqrt();
            }
        }
        None => {
            status = FitStatus::Singular;
            diagnostics = "normal matrix J^T W J is singular; parameters not separately identifiable".into();
            for &i in &free_idx {
                std_errors[i] = f64::INFINITY;
            }
        }
    }
    let full = problem.expand(&x);
    for (i, p) in problem.params.iter().enumerate() {
        if let ParamKind::Tied { to, scale, .. } = p.kind {
            std_errors[i] = scale.abs() * std_errors[to];
        }
    }
    if status == FitStatus::MaxIter {
        diagnostics = format!("maximum of {} iterations reached", options.max_iter);
    }
    Ok(FitResult {
        names: problem.params.iter().map(|p| p.name.clone()).collect(),
        params: full,
        std_errors,
        cost,
        residual_norm: (2.0 * cost).sqrt(),
        status,
        iterations,
        n_residuals: m,
        n_free: n,
        diagnostics,
    })
}

/// `(J^T J)^-1`, or `None` when the normal matrix is numerically singular.
fn covariance(j: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = j.ncols();
    // Column-equilibrate so the conditioning test is scale independent.
    let norms: Vec<f64> = (0..n).map(|k| j.column(k).norm()).collect();
    if norms.iter().any(|&c| c == 0.0 || !c.is_finite()) {
        return None;
    }
    let mut js = j.clone();
    for (k, c) in norms.iter().enumerate() {
        js.column_mut(k).scale_mut(1.0 / c);
    }
    let svd = js.clone().svd(false, false);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= smax * 1e-10 {
        return None;
    }
    let a = js.transpose() * &js;
    let inv = a.try_inverse()?;
    Some(DMatrix::from_fn(n, n, |r, c| inv[(r, c)] / (norms[r] * norms[c])))
}

/// Linearized 1-sigma interval for one parameter.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Interval {
    pub value: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    /// `false` when the normal matrix is singular and the interval is unbounded.
    pub bounded: bool,
}

/// Linearized standard error of `param` at a fit result, from `(J^T W J)^-1`
/// scaled by the reduced chi-square.
pub fn profile_uncertainty(problem: &FitProblem<'_>, result: &FitResult, param: usize) -> Result<Interval> {
    problem.validate()?;
    let p = problem
        .params
        .get(param)
        .ok_or_else(|| Error::Input(format!("no parameter with index {param}")))?;
    let value = result.params[param];
    let (target, factor) = match p.kind {
        ParamKind::Fixed => {
            return Ok(Interval {
                value,
                sigma: 0.0,
                lower: value,
                upper: value,
                bounded: true,
            })
        }
        ParamKind::Tied { to, scale, .. } => {
            if !problem.params[to].is_free() {
                return Ok(Interval {
                    value,
                    sigma: 0.0,
                    lower: value,
                    upper: value,
                    bounded: true,
                });
            }
            (to, scale.abs())
        }
        ParamKind::Free => (param, 1.0),
    };
    let free_idx = problem.free_indices();
    let x: Vec<f64> = free_idx.iter().map(|&i| result.params[i]).collect();
    let r = problem.weighted_residuals(&problem.expand(&x))?;
    let j = problem.jacobian(&free_idx, &x, &r)?;
    let (m, n) = (r.len(), x.len());
    let k = free_idx.iter().position(|&i| i == target).expect("free index");
    match covariance(&j) {
        Some(cov) => {
            let s2 = if m > n { 2.0 * cost_of(&r) / (m - n) as f64 } else { 0.0 };
            let sigma = factor * (s2 * cov[(k, k)]).max(0.0).sqrt();
            Ok(Interval {
                value,
                sigma,
                lower: value - sigma,
                upper: value + sigma,
                bounded: true,
            })
        }
        None => Ok(Interval {
            value,
            sigma: f64::INFINITY,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            bounded: false,
        }),
    }
}
