//! Logistic regression by iteratively reweighted least squares, the
//! Greenland-Drescher attributable fraction, and inverse-probability-of-remaining-
//! uninfected weights from a pooled logistic model.

use std::collections::HashSet;

use log::warn;
use thiserror::Error;

use crate::ajestimator::PiecewiseWeights;
use crate::eventstore::Cohort;
use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, pivot_tolerance};
use crate::real::{expit, softplus, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GlmError {
    #[error("design has no observations")]
    Empty,
    #[error("design is rank deficient: column(s) {} are linear combinations of earlier columns", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("estimand undefined: {0}")]
    Undefined(String),
    #[error("logistic model did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("interval ({start}, {end}] has no patients at risk of infection")]
    EmptyInterval { start: f64, end: f64 },
}

/// Binary-response design stored row-wise in compressed sparse form.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    names: Vec<String>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    response: Vec<bool>,
    weights: Vec<T>,
}

impl<T: Real> DesignMatrix<T> {
    /// Empty design with the given column names (which must be unique).
    pub fn new(names: Vec<String>) -> Result<Self, GlmError> {
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(GlmError::InvalidDesign(format!("duplicate column name '{n}'")));
            }
        }
        if names.is_empty() {
            return Err(GlmError::InvalidDesign("no columns".into()));
        }
        Ok(DesignMatrix {
            names,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            response: Vec::new(),
            weights: Vec::new(),
        })
    }

    /// Builds a design from dense rows with unit weights.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<T>], response: &[bool]) -> Result<Self, GlmError> {
        if rows.len() != response.len() {
            return Err(GlmError::InvalidDesign("row and response counts differ".into()));
        }
        let mut d = Self::new(names)?;
        for (row, &y) in rows.iter().zip(response) {
            d.push_row(row, y, T::one())?;
        }
        Ok(d)
    }

    pub fn push_row(&mut self, row: &[T], y: bool, weight: T) -> Result<(), GlmError> {
        if row.len() != self.names.len() {
            return Err(GlmError::InvalidDesign(format!(
                "row has {} values, design has {} columns",
                row.len(),
                self.names.len()
            )));
        }
        let entries: Vec<(usize, T)> = row
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(j, v)| (j, *v))
            .collect();
        self.push_sparse_row(&entries, y, weight)
    }

    /// Adds a row given as `(column, value)` pairs; omitted columns are zero.
    pub fn push_sparse_row(&mut self, entries: &[(usize, T)], y: bool, weight: T) -> Result<(), GlmError> {
        if !(weight >= T::zero()) || !weight.is_finite() {
            return Err(GlmError::InvalidDesign(format!("weight must be finite and >= 0, got {weight}")));
        }
        for &(j, v) in entries {
            if j >= self.names.len() {
                return Err(GlmError::InvalidDesign(format!("column index {j} out of range")));
            }
            if !v.is_finite() {
                return Err(GlmError::InvalidDesign(format!("non-finite value in column '{}'", self.names[j])));
            }
            self.col_idx.push(j);
            self.values.push(v);
        }
        self.row_ptr.push(self.col_idx.len());
        self.response.push(y);
        self.weights.push(weight);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn response(&self) -> &[bool] {
        &self.response
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn linear_predictor(&self, i: usize, beta: &[T]) -> T {
        self.row(i).map(|(j, v)| v * beta[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub max_iter: usize,
    /// Sup-norm of the score at which the fit counts as converged.
    pub gradient_tol: T,
    pub max_halvings: usize,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            gradient_tol: T::lit(1e-8).max(T::epsilon().sqrt() * T::lit(0.1)),
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit<T> {
    pub names: Vec<String>,
    pub coefficients: Vec<T>,
    /// Inverse Fisher information at the optimum, row-major `p×p`; NaN when singular.
    pub covariance: Vec<T>,
    pub converged: bool,
    /// Some fitted probabilities sit numerically at 0 or 1.
    pub separation: bool,
    pub iterations: usize,
    pub log_likelihood: T,
    pub gradient_norm: T,
}

impl<T: Real> LogisticFit<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    pub fn covariance_at(&self, i: usize, j: usize) -> T {
        self.covariance[i * self.coefficients.len() + j]
    }

    /// Fitted probability for a dense predictor row.
    pub fn predict(&self, row: &[T]) -> T {
        expit(row.iter().zip(&self.coefficients).map(|(x, b)| *x * *b).sum())
    }
}

struct Evaluation<T> {
    log_likelihood: T,
    gradient: Vec<T>,
    information: Vec<T>,
    extreme: bool,
}

fn evaluate<T: Real>(design: &DesignMatrix<T>, beta: &[T], with_information: bool) -> Evaluation<T> {
    let p = design.n_cols();
    // Neumaier-compensated: near the optimum, steps change the sum by less than its
    // naive rounding error
    let mut ll = T::zero();
    let mut ll_carry = T::zero();
    let mut gradient = vec![T::zero(); p];
    let mut information = if with_information { vec![T::zero(); p * p] } else { Vec::new() };
    let tiny = pivot_tolerance::<T>();
    let mut extreme = false;
    for i in 0..design.n_rows() {
        let w = design.weights[i];
        if w == T::zero() {
            continue;
        }
        let eta = design.linear_predictor(i, beta);
        let mu = expit(eta);
        let y = if design.response[i] { T::one() } else { T::zero() };
        let term = w * (y * eta - softplus(eta));
        let sum = ll + term;
        ll_carry += if ll.abs() >= term.abs() { (ll - sum) + term } else { (term - sum) + ll };
        ll = sum;
        if mu < tiny || mu > T::one() - tiny {
            extreme = true;
        }
        let resid = w * (y - mu);
        let curvature = w * mu * (T::one() - mu);
        for (j, v) in design.row(i) {
            gradient[j] += resid * v;
            if with_information {
                for (k, u) in design.row(i) {
                    if k <= j {
                        information[j * p + k] += curvature * v * u;
                    }
                }
            }
        }
    }
    if with_information {
        for j in 0..p {
            for k in 0..j {
                information[k * p + j] = information[j * p + k];
            }
        }
    }
    Evaluation {
        log_likelihood: ll + ll_carry,
        gradient,
        information,
        extreme,
    }
}

fn sup_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Higher log-likelihood, or equal up to rounding with a smaller score.
fn improves<T: Real>(new: &Evaluation<T>, old: &Evaluation<T>) -> bool {
    if !new.log_likelihood.is_finite() {
        return false;
    }
    if new.log_likelihood >= old.log_likelihood {
        return true;
    }
    let slack = T::lit(16.0) * T::epsilon() * old.log_likelihood.abs().max(T::one());
    new.log_likelihood >= old.log_likelihood - slack && sup_norm(&new.gradient) < sup_norm(&old.gradient)
}

/// Checks that the columns are linearly independent on rows with positive weight.
pub fn check_rank<T: Real>(design: &DesignMatrix<T>) -> Result<(), GlmError> {
    let p = design.n_cols();
    let mut gram = vec![T::zero(); p * p];
    for i in 0..design.n_rows() {
        let w = design.weights[i];
        if w == T::zero() {
            continue;
        }
        for (j, v) in design.row(i) {
            for (k, u) in design.row(i) {
                gram[j * p + k] += w * v * u;
            }
        }
    }
    cholesky(&gram, p)
        .map(|_| ())
        .map_err(|cols| GlmError::RankDeficient(cols.into_iter().map(|j| design.names[j].clone()).collect()))
}

/// Maximum-likelihood logistic regression by IRLS with step halving.
///
/// Non-convergence (including separation) is reported in the fit, not as an error.
pub fn fit_logistic<T: Real>(design: &DesignMatrix<T>, options: &FitOptions<T>) -> Result<LogisticFit<T>, GlmError> {
    let active = design.weights.iter().filter(|w| **w > T::zero()).count();
    if design.n_rows() == 0 || active == 0 {
        return Err(GlmError::Empty);
    }
    check_rank(design)?;
    let p = design.n_cols();
    let mut beta = vec![T::zero(); p];
    let mut current = evaluate(design, &beta, true);
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = false;

    loop {
        if sup_norm(&current.gradient) <= options.gradient_tol {
            converged = true;
            // one more full Newton step; quadratic convergence takes it to round-off
            if let Ok(l) = cholesky(&current.information, p) {
                let delta = cholesky_solve(&l, p, &current.gradient);
                let trial: Vec<T> = beta.iter().zip(&delta).map(|(b, d)| *b + *d).collect();
                let eval = evaluate(design, &trial, true);
                // the likelihood is flat to round-off here; judge by the gradient
                let guard = T::epsilon().sqrt() * current.log_likelihood.abs().max(T::one());
                if eval.log_likelihood >= current.log_likelihood - guard
                    && sup_norm(&eval.gradient) < sup_norm(&current.gradient)
                {
                    beta = trial;
                    current = eval;
                }
            }
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        let Ok(l) = cholesky(&current.information, p) else {
            stalled = true;
            break;
        };
        let delta = cholesky_solve(&l, p, &current.gradient);
        iterations += 1;
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial: Vec<T> = beta.iter().zip(&delta).map(|(b, d)| *b + step * *d).collect();
            let eval = evaluate(design, &trial, true);
            if improves(&eval, &current) {
                accepted = Some((trial, eval));
                break;
            }
            step /= T::one() + T::one();
        }
        match accepted {
            Some((b, e)) => {
                beta = b;
                current = e;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }

    let separation = current.extreme;
    let covariance = match cholesky(&current.information, p) {
        Ok(l) => cholesky_inverse(&l, p),
        Err(_) => vec![T::nan(); p * p],
    };
    let singular = covariance.iter().any(|v| v.is_nan());
    Ok(LogisticFit {
        names: design.names.clone(),
        coefficients: beta,
        covariance,
        converged: converged && !separation && !stalled && !singular,
        separation,
        iterations,
        log_likelihood: current.log_likelihood,
        gradient_norm: sup_norm(&current.gradient),
    })
}

/// Attributable fraction with variance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedPaf<T> {
    pub paf: T,
    pub variance: T,
    pub fit: LogisticFit<T>,
}

/// Greenland-Drescher maximum-likelihood attributable fraction.
///
/// Fits `logit P(D=1) = β0 + βE·E + βZ·Z` and returns
/// `1 − (1/#cases) Σ_cases p̂(E=0, Z_i) / p̂(E_i, Z_i)`, with a delta-method variance
/// from the fit covariance.
pub fn paf_greenland_drescher<T: Real>(
    exposed: &[bool],
    died: &[bool],
    covariates: &[Vec<T>],
    covariate_names: &[String],
    options: &FitOptions<T>,
) -> Result<AdjustedPaf<T>, GlmError> {
    let n = exposed.len();
    if died.len() != n || (!covariates.is_empty() && covariates.len() != n) {
        return Err(GlmError::InvalidDesign("exposure, outcome and covariate lengths differ".into()));
    }
    let q = covariate_names.len();
    let cases = died.iter().filter(|d| **d).count();
    if cases == 0 {
        return Err(GlmError::Undefined("no outcome cases".into()));
    }
    let mut names = vec!["(intercept)".to_string(), "exposure".to_string()];
    names.extend(covariate_names.iter().cloned());
    let mut design = DesignMatrix::new(names)?;
    let mut row = vec![T::zero(); 2 + q];
    for i in 0..n {
        row[0] = T::one();
        row[1] = if exposed[i] { T::one() } else { T::zero() };
        if q > 0 {
            if covariates[i].len() != q {
                return Err(GlmError::InvalidDesign(format!("row {i} has {} covariates", covariates[i].len())));
            }
            row[2..].copy_from_slice(&covariates[i]);
        }
        design.push_row(&row, died[i], T::one())?;
    }
    let fit = fit_logistic(&design, options)?;
    if !fit.converged {
        return Err(GlmError::NotConverged {
            iterations: fit.iterations,
        });
    }

    let p = 2 + q;
    let beta = &fit.coefficients;
    let mut sum_ratio = T::zero();
    let mut grad = vec![T::zero(); p];
    for i in 0..n {
        if !died[i] {
            continue;
        }
        let z: T = (0..q).map(|k| covariates[i][k] * beta[2 + k]).sum();
        let eta0 = beta[0] + z;
        let eta = if exposed[i] { eta0 + beta[1] } else { eta0 };
        let p0 = expit(eta0);
        let p1 = expit(eta);
        let ratio = p0 / p1;
        sum_ratio += ratio;
        // d ratio / d beta = ratio [(1 - p0) x0 - (1 - p1) x]
        let a = T::one() - p0;
        let b = T::one() - p1;
        grad[0] += ratio * (a - b);
        if exposed[i] {
            grad[1] -= ratio * b;
        }
        for k in 0..q {
            grad[2 + k] += ratio * (a - b) * covariates[i][k];
        }
    }
    let n_cases = T::count(cases);
    let paf = T::one() - sum_ratio / n_cases;
    grad.iter_mut().for_each(|g| *g = -*g / n_cases);
    let mut variance = T::zero();
    for i in 0..p {
        for j in 0..p {
            variance += grad[i] * fit.covariance_at(i, j) * grad[j];
        }
    }
    Ok(AdjustedPaf { paf, variance, fit })
}

/// Functional form of time in the infection-onset model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBasis {
    /// One indicator per grid interval.
    IntervalIndicators,
    /// Intercept plus powers of the (scaled) interval midpoint.
    Polynomial(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpwOptions<T> {
    /// Breakpoints `0 = g0 < g1 < ... < gK` with `gK >= τ`; `None` means integer days.
    pub breakpoints: Option<Vec<T>>,
    pub stabilized: bool,
    pub cap: T,
    pub time_basis: TimeBasis,
    pub fit: FitOptions<T>,
}

impl<T: Real> Default for IpwOptions<T> {
    fn default() -> Self {
        IpwOptions {
            breakpoints: None,
            stabilized: true,
            cap: T::lit(50.0),
            time_basis: TimeBasis::IntervalIndicators,
            fit: FitOptions::default(),
        }
    }
}

/// Per-patient inverse probability of remaining uninfected, piecewise constant on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IpwWeights<T> {
    breakpoints: Vec<T>,
    /// `weights[i][k]`: patient `i` during interval `k`.
    weights: Vec<Vec<T>>,
    /// Number of `(patient, interval)` weights cut down to the cap.
    pub truncated: usize,
    /// Whether the infection-onset model(s) converged.
    pub converged: bool,
}

impl<T: Real> IpwWeights<T> {
    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    /// Weight of patient `i` at time `t`.
    pub fn at(&self, patient: usize, t: T) -> T {
        self.weight(patient, self.segment(t))
    }
}

impl<T: Real> PiecewiseWeights<T> for IpwWeights<T> {
    fn segment(&self, t: T) -> usize {
        // interval (g_k, g_{k+1}] containing t
        let k = self.breakpoints[1..].partition_point(|&g| g < t);
        k.min(self.breakpoints.len() - 2)
    }

    fn weight(&self, patient: usize, segment: usize) -> T {
        self.weights[patient][segment]
    }
}

/// Last time any patient is still uninfected and under observation.
fn uninfected_horizon<T: Real>(cohort: &Cohort<T>) -> T {
    cohort
        .patients()
        .iter()
        .map(|p| p.infection_time.map_or(p.exit_time, |inf| inf.min(p.exit_time)))
        .fold(T::zero(), |a, b| a.max(b))
}

fn default_breakpoints<T: Real>(horizon: T) -> Vec<T> {
    let end = horizon.ceil().max(T::one()).to_usize().unwrap_or(1);
    (0..=end).map(T::count).collect()
}

/// Interval-level infection probabilities for every patient, from a pooled logistic
/// model on uninfected person-intervals.
fn onset_probabilities<T: Real>(
    cohort: &Cohort<T>,
    covariates: &[usize],
    breakpoints: &[T],
    basis: TimeBasis,
    options: &FitOptions<T>,
) -> Result<(Vec<Vec<T>>, bool), GlmError> {
    let k_count = breakpoints.len() - 1;
    let patients = cohort.patients();
    let cov_values: Vec<Vec<T>> = patients
        .iter()
        .map(|p| {
            let all: Vec<T> = p.covariates.values().copied().collect();
            covariates.iter().map(|&c| all[c]).collect()
        })
        .collect();

    // at-risk and events per interval
    let mut at_risk = vec![0usize; k_count];
    let mut events = vec![0usize; k_count];
    let mut person_intervals = Vec::new();
    for (i, p) in patients.iter().enumerate() {
        for k in 0..k_count {
            let start = breakpoints[k];
            let end = breakpoints[k + 1];
            let uninfected = p.infection_time.is_none_or(|inf| inf > start);
            if p.exit_time <= start || !uninfected {
                break;
            }
            let infected_here = matches!(p.infection_time, Some(inf) if inf <= end);
            at_risk[k] += 1;
            events[k] += usize::from(infected_here);
            person_intervals.push((i, k, infected_here));
        }
    }
    for k in 0..k_count {
        if at_risk[k] == 0 {
            return Err(GlmError::EmptyInterval {
                start: breakpoints[k].to_f64_lossy(),
                end: breakpoints[k + 1].to_f64_lossy(),
            });
        }
    }

    // Intervals whose observed onset proportion is 0 or 1 sit at the boundary of the
    // indicator model; their probability is fixed and their rows are left out.
    let fixed: Vec<Option<T>> = (0..k_count)
        .map(|k| match basis {
            TimeBasis::IntervalIndicators if events[k] == 0 => Some(T::zero()),
            TimeBasis::IntervalIndicators if events[k] == at_risk[k] => Some(T::one()),
            _ => None,
        })
        .collect();

    let free: Vec<usize> = (0..k_count).filter(|&k| fixed[k].is_none()).collect();
    let mut column_of = vec![usize::MAX; k_count];
    let mut names = Vec::new();
    let time_cols = match basis {
        TimeBasis::IntervalIndicators => {
            for (c, &k) in free.iter().enumerate() {
                column_of[k] = c;
                names.push(format!("interval[{k}]"));
            }
            free.len()
        }
        TimeBasis::Polynomial(degree) => {
            for d in 0..=degree {
                names.push(format!("time^{d}"));
            }
            degree + 1
        }
    };
    let cov_names = cohort.covariate_names();
    for &c in covariates {
        names.push(cov_names[c].clone());
    }
    let horizon = breakpoints[k_count];
    let time_features = |k: usize| -> Vec<(usize, T)> {
        match basis {
            TimeBasis::IntervalIndicators => vec![(column_of[k], T::one())],
            TimeBasis::Polynomial(degree) => {
                let mid = (breakpoints[k] + breakpoints[k + 1]) / (T::one() + T::one()) / horizon;
                (0..=degree).map(|d| (d, mid.powi(d as i32))).collect()
            }
        }
    };

    let mut probs = vec![vec![T::zero(); k_count]; patients.len()];
    let mut converged = true;
    if time_cols > 0 {
        let mut design = DesignMatrix::new(names)?;
        for &(i, k, y) in &person_intervals {
            if fixed[k].is_some() {
                continue;
            }
            let mut entries = time_features(k);
            for (c, v) in cov_values[i].iter().enumerate() {
                entries.push((time_cols + c, *v));
            }
            design.push_sparse_row(&entries, y, T::one())?;
        }
        let fit = fit_logistic(&design, options)?;
        converged = fit.converged;
        for (i, row) in probs.iter_mut().enumerate() {
            let z: T = cov_values[i]
                .iter()
                .enumerate()
                .map(|(c, v)| *v * fit.coefficients[time_cols + c])
                .sum();
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = match fixed[k] {
                    Some(v) => v,
                    None => {
                        let eta: T = time_features(k).iter().map(|(j, v)| *v * fit.coefficients[*j]).sum();
                        expit(eta + z)
                    }
                };
            }
        }
    } else {
        for row in probs.iter_mut() {
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = fixed[k].unwrap_or(T::zero());
            }
        }
    }
    Ok((probs, converged))
}

/// Inverse probability of remaining uninfected up to and including the interval that
/// contains `t`, given baseline covariates.
///
/// Stabilized weights multiply by the same quantity from a model without covariates.
/// Weights above `options.cap` are truncated with a warning.
pub fn ipw_uninfected_weights<T: Real>(
    cohort: &Cohort<T>,
    covariate_names: &[String],
    options: &IpwOptions<T>,
) -> Result<IpwWeights<T>, GlmError> {
    if cohort.is_empty() {
        return Err(GlmError::Empty);
    }
    cohort
        .check_covariates(covariate_names)
        .map_err(|e| GlmError::InvalidDesign(e.to_string()))?;
    let horizon = uninfected_horizon(cohort);
    let breakpoints = options
        .breakpoints
        .clone()
        .unwrap_or_else(|| default_breakpoints(horizon));
    if breakpoints.len() < 2
        || breakpoints[0] != T::zero()
        || breakpoints.windows(2).any(|w| w[0] >= w[1])
        || breakpoints[breakpoints.len() - 1] < horizon
    {
        return Err(GlmError::InvalidDesign(
            "breakpoints must start at 0, increase strictly and cover uninfected follow-up".into(),
        ));
    }
    let cov_index: Vec<usize> = covariate_names
        .iter()
        .map(|n| cohort.covariate_names().iter().position(|c| c == n).unwrap())
        .collect();

    let (denominator, den_ok) = onset_probabilities(cohort, &cov_index, &breakpoints, options.time_basis, &options.fit)?;
    let (numerator, num_ok) = if options.stabilized {
        if cov_index.is_empty() {
            (denominator.clone(), den_ok)
        } else {
            let (p, ok) = onset_probabilities(cohort, &[], &breakpoints, options.time_basis, &options.fit)?;
            (p, ok)
        }
    } else {
        (Vec::new(), true)
    };

    let k_count = breakpoints.len() - 1;
    let mut truncated = 0;
    let mut weights = Vec::with_capacity(cohort.len());
    for i in 0..cohort.len() {
        let mut row = Vec::with_capacity(k_count);
        let mut den = T::one();
        let mut num = T::one();
        for k in 0..k_count {
            den *= T::one() - denominator[i][k];
            if options.stabilized {
                num *= T::one() - numerator[i][k];
            }
            let mut w = if options.stabilized && cov_index.is_empty() {
                // numerator and denominator are the same model
                T::one()
            } else if options.stabilized {
                num / den
            } else {
                T::one() / den
            };
            if !(w <= options.cap) {
                w = options.cap;
                truncated += 1;
            }
            row.push(w);
        }
        weights.push(row);
    }
    if truncated > 0 {
        warn!("{truncated} inverse probability weights truncated at {}", options.cap);
    }
    let converged = den_ok && num_ok;
    if !converged {
        warn!("infection-onset model did not converge; weights may be unreliable");
    }
    Ok(IpwWeights {
        breakpoints,
        weights,
        truncated,
        converged,
    })
}
