//! Cox proportional-hazards regression.
//!
//! Negative log partial likelihood with Breslow or Efron handling of tied
//! event times, exact analytic gradient and Hessian, and Newton fitting with
//! step-halving. Risk scores are plain linear predictors `x·beta`; no
//! baseline hazard is estimated.

use ndarray::{Array1, Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::survstat::SurvivalRecord;

/// How tied event times enter the partial likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TieMethod {
    Breslow,
    Efron,
}

/// Fitting controls. `Default` gives Efron ties, gradient tolerance 1e-7,
/// 100 iterations, ridge jitter 1e-8 (numerical rescue only), and internal
/// column standardization with coefficients mapped back to the input scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tie_method: TieMethod,
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    pub ridge_jitter: f64,
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tie_method: TieMethod::Efron,
            gradient_tolerance: 1e-7,
            max_iterations: 100,
            ridge_jitter: 1e-8,
            standardize: true,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::InvalidArgument("gradient_tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.ridge_jitter >= 0.0) {
            return Err(Error::InvalidArgument("ridge_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

/// A fitted Cox model: coefficients plus convergence diagnostics.
///
/// When the fit was run with standardization the convergence criterion was
/// met on the standardized scale; `beta` is always reported in the input
/// column scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxModel {
    pub feature_names: Vec<String>,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_nlpl: f64,
}

impl CoxModel {
    /// Linear predictor `x·beta` per row. `column_names` must match the
    /// model's feature names in order.
    pub fn predict_risk(&self, x: ArrayView2<'_, f64>, column_names: &[String]) -> Result<Vec<f64>> {
        if column_names != self.feature_names.as_slice() {
            return Err(Error::Schema(format!(
                "columns {:?} do not match model features {:?}",
                column_names, self.feature_names
            )));
        }
        if x.ncols() != self.beta.len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} columns, model has {} coefficients",
                x.ncols(),
                self.beta.len()
            )));
        }
        let beta = Array1::from(self.beta.clone());
        Ok(x.outer_iter().map(|row| row.dot(&beta)).collect())
    }
}

/// Linear predictor for `model` on `x` (free-function form of
/// [`CoxModel::predict_risk`]).
pub fn predict_risk(model: &CoxModel, x: ArrayView2<'_, f64>, column_names: &[String]) -> Result<Vec<f64>> {
    model.predict_risk(x, column_names)
}

// ── Partial-likelihood evaluation ────────────────────────────────────────

/// Rows grouped by distinct time, descending, so the risk set accumulates
/// as the sweep proceeds.
struct TieGroup {
    members: Vec<usize>,
    deaths: Vec<usize>,
}

struct CoxProblem<'a> {
    x: ArrayView2<'a, f64>,
    groups: Vec<TieGroup>,
    n_events: usize,
}

impl<'a> CoxProblem<'a> {
    fn new(x: ArrayView2<'a, f64>, records: &[SurvivalRecord]) -> Result<Self> {
        if x.nrows() != records.len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} rows but {} records supplied",
                x.nrows(),
                records.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design matrix contains non-finite entries".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if !r.time.is_finite() || r.time <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "record {i} has invalid time {}",
                    r.time
                )));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.sort_by(|&a, &b| records[b].time.partial_cmp(&records[a].time).unwrap());

        let mut groups = Vec::new();
        let mut n_events = 0;
        let mut i = 0;
        while i < order.len() {
            let t = records[order[i]].time;
            let mut members = Vec::new();
            let mut deaths = Vec::new();
            while i < order.len() && records[order[i]].time == t {
                let idx = order[i];
                members.push(idx);
                if records[idx].event {
                    deaths.push(idx);
                    n_events += 1;
                }
                i += 1;
            }
            groups.push(TieGroup { members, deaths });
        }
        Ok(Self { x, groups, n_events })
    }

    fn check_beta(&self, beta: &Array1<f64>) -> Result<Array1<f64>> {
        if beta.len() != self.x.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "beta has {} entries, matrix has {} columns",
                beta.len(),
                self.x.ncols()
            )));
        }
        let eta: Array1<f64> = self.x.outer_iter().map(|row| row.dot(beta)).collect();
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow(
                "linear predictor is non-finite; standardize covariates".into(),
            ));
        }
        Ok(eta)
    }

    /// NLPL only. Risk terms are accumulated relative to the largest linear
    /// predictor so the exponentials stay bounded.
    fn nlpl(&self, beta: &Array1<f64>, ties: TieMethod) -> Result<f64> {
        let eta = self.check_beta(beta)?;
        if self.n_events == 0 {
            return Ok(0.0);
        }
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0_f64;
        let mut nlpl = 0.0_f64;
        for group in &self.groups {
            for &m in &group.members {
                s0 += (eta[m] - shift).exp();
            }
            let d = group.deaths.len();
            if d == 0 {
                continue;
            }
            let mut s0d = 0.0;
            for &m in &group.deaths {
                nlpl -= eta[m];
                s0d += (eta[m] - shift).exp();
            }
            match ties {
                TieMethod::Breslow => {
                    nlpl += d as f64 * (s0.ln() + shift);
                }
                TieMethod::Efron => {
                    for l in 0..d {
                        let frac = l as f64 / d as f64;
                        nlpl += (s0 - frac * s0d).ln() + shift;
                    }
                }
            }
        }
        Ok(nlpl)
    }

    /// NLPL with its analytic gradient and Hessian. The Hessian is symmetric
    /// positive semidefinite by construction.
    fn nlpl_grad_hess(
        &self,
        beta: &Array1<f64>,
        ties: TieMethod,
    ) -> Result<(f64, Array1<f64>, Array2<f64>)> {
        let eta = self.check_beta(beta)?;
        let p = self.x.ncols();
        let mut grad = Array1::<f64>::zeros(p);
        let mut hess = Array2::<f64>::zeros((p, p));
        if self.n_events == 0 {
            return Ok((0.0, grad, hess));
        }
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let mut s0 = 0.0_f64;
        let mut s1 = Array1::<f64>::zeros(p);
        let mut s2 = Array2::<f64>::zeros((p, p));
        let mut nlpl = 0.0_f64;

        let mut s1d = Array1::<f64>::zeros(p);
        let mut s2d = Array2::<f64>::zeros((p, p));

        for group in &self.groups {
            for &m in &group.members {
                let w = (eta[m] - shift).exp();
                let row = self.x.row(m);
                s0 += w;
                for a in 0..p {
                    let xa = row[a];
                    s1[a] += w * xa;
                    for b in a..p {
                        s2[[a, b]] += w * xa * row[b];
                    }
                }
            }
            let d = group.deaths.len();
            if d == 0 {
                continue;
            }

            let mut s0d = 0.0;
            s1d.fill(0.0);
            s2d.fill(0.0);
            for &m in &group.deaths {
                let w = (eta[m] - shift).exp();
                let row = self.x.row(m);
                nlpl -= eta[m];
                for a in 0..p {
                    grad[a] -= row[a];
                }
                if ties == TieMethod::Efron {
                    s0d += w;
                    for a in 0..p {
                        let xa = row[a];
                        s1d[a] += w * xa;
                        for b in a..p {
                            s2d[[a, b]] += w * xa * row[b];
                        }
                    }
                }
            }

            let steps: &[f64] = match ties {
                TieMethod::Breslow => &[0.0],
                TieMethod::Efron => &[], // handled below per l
            };
            let efron_steps: Vec<f64>;
            let fracs: &[f64] = if ties == TieMethod::Efron {
                efron_steps = (0..d).map(|l| l as f64 / d as f64).collect();
                &efron_steps
            } else {
                steps
            };
            let weight = if ties == TieMethod::Breslow { d as f64 } else { 1.0 };

            for &frac in fracs {
                let phi = s0 - frac * s0d;
                nlpl += weight * (phi.ln() + shift);
                for a in 0..p {
                    let va = (s1[a] - frac * s1d[a]) / phi;
                    grad[a] += weight * va;
                    for b in a..p {
                        let vb = (s1[b] - frac * s1d[b]) / phi;
                        let m2 = (upper(&s2, a, b) - frac * upper(&s2d, a, b)) / phi;
                        hess[[a, b]] += weight * (m2 - va * vb);
                    }
                }
            }
        }

        // Mirror the upper triangle so symmetry holds exactly.
        for a in 0..p {
            for b in 0..a {
                hess[[a, b]] = hess[[b, a]];
            }
        }
        Ok((nlpl, grad, hess))
    }
}

#[inline]
fn upper(m: &Array2<f64>, a: usize, b: usize) -> f64 {
    if a <= b {
        m[[a, b]]
    } else {
        m[[b, a]]
    }
}

/// Negative log partial likelihood of `beta` on the given data.
///
/// `NLPL = -sum_events [x_i beta - log sum_{j in R(t_i)} exp(x_j beta)]`
/// with the requested tie adjustment; the risk set is `{j : t_j >= t_i}`.
pub fn negative_log_partial_likelihood(
    x: ArrayView2<'_, f64>,
    records: &[SurvivalRecord],
    beta: &Array1<f64>,
    ties: TieMethod,
) -> Result<f64> {
    CoxProblem::new(x, records)?.nlpl(beta, ties)
}

/// Analytic gradient and Hessian of the negative log partial likelihood.
pub fn nlpl_gradient_hessian(
    x: ArrayView2<'_, f64>,
    records: &[SurvivalRecord],
    beta: &Array1<f64>,
    ties: TieMethod,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let (_, g, h) = CoxProblem::new(x, records)?.nlpl_grad_hess(beta, ties)?;
    Ok((g, h))
}

/// Solve `m v = rhs` for symmetric positive-definite `m` via Cholesky.
/// Returns `None` when the factorization breaks down.
fn cholesky_solve(m: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
    let p = m.nrows();
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut sum = m[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // forward then back substitution
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut v = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in (i + 1)..p {
            sum -= l[[k, i]] * v[k];
        }
        v[i] = sum / l[[i, i]];
    }
    if v.iter().any(|t| !t.is_finite()) {
        return None;
    }
    Some(v)
}

const MAX_STEP_HALVINGS: u32 = 20;

/// Fit a Cox model by Newton iteration with step-halving.
///
/// Requires at least one event and non-constant columns. Non-convergence is
/// reported through `converged = false`, not an error; the ridge jitter is
/// added to the Hessian diagonal only when the factorization fails.
pub fn fit_cox(
    x: ArrayView2<'_, f64>,
    records: &[SurvivalRecord],
    feature_names: &[String],
    options: &FitOptions,
) -> Result<CoxModel> {
    options.validate()?;
    let p = x.ncols();
    if feature_names.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            p
        )));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("design matrix has no columns".into()));
    }
    if records.iter().filter(|r| r.event).count() == 0 {
        return Err(Error::NoEvents("cannot fit a Cox model without events".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("design matrix contains non-finite entries".into()));
    }
    for (j, col) in x.columns().into_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::DegenerateDesign(format!(
                "column '{}' is constant",
                feature_names[j]
            )));
        }
    }

    // Optional standardization; scale factors map coefficients back later.
    let n = x.nrows();
    let mut work = x.to_owned();
    let mut scales = vec![1.0_f64; p];
    if options.standardize {
        for j in 0..p {
            let mut col = work.column_mut(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            scales[j] = sd;
            col.mapv_inplace(|v| (v - mean) / sd);
        }
    }

    let problem = CoxProblem::new(work.view(), records)?;
    let ties = options.tie_method;
    let mut beta = Array1::<f64>::zeros(p);
    let mut converged = false;
    let mut iterations = 0;

    let (mut nlpl, mut grad, mut hess) = problem.nlpl_grad_hess(&beta, ties)?;
    for _ in 0..options.max_iterations {
        let grad_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if grad_norm <= options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Newton direction, with escalating jitter if the Hessian is not PD.
        let mut delta = cholesky_solve(&hess, &grad);
        if delta.is_none() && options.ridge_jitter > 0.0 {
            let mut jitter = options.ridge_jitter;
            for _ in 0..8 {
                let mut damped = hess.clone();
                for a in 0..p {
                    damped[[a, a]] += jitter;
                }
                delta = cholesky_solve(&damped, &grad);
                if delta.is_some() {
                    break;
                }
                jitter *= 10.0;
            }
        }
        let delta = match delta {
            Some(d) => d,
            None => break, // unsalvageable Hessian; report converged = false
        };

        let mut step = 1.0_f64;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = &beta - &(&delta * step);
            match problem.nlpl(&candidate, ties) {
                Ok(value) if value.is_finite() && value < nlpl => {
                    accepted = Some((candidate, value));
                    break;
                }
                _ => step *= 0.5,
            }
        }
        match accepted {
            Some((candidate, value)) => {
                beta = candidate;
                nlpl = value;
                let (_, g, h) = problem.nlpl_grad_hess(&beta, ties)?;
                grad = g;
                hess = h;
            }
            None => break, // no descent found; report converged = false
        }
    }
    if !converged {
        let grad_norm = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        converged = grad_norm <= options.gradient_tolerance;
    }

    let beta_original: Vec<f64> = beta
        .iter()
        .zip(scales.iter())
        .map(|(b, s)| b / s)
        .collect();

    Ok(CoxModel {
        feature_names: feature_names.to_vec(),
        beta: beta_original,
        converged,
        iterations,
        final_nlpl: nlpl,
    })
}
