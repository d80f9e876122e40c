use std::fmt;

use super::landmark::{feasibility, landmark_rows, LandmarkOptions, SkippedLandmark};
use super::{covariate_indices, PafError};
use crate::eventstore::{landmark_table, Cohort, LandmarkGrid};
use crate::glm::{fit_logistic, DesignMatrix, LogisticFit};
use crate::real::{expit, Real};

/// How the landmark time enters the pooled model (always interacted with exposure).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupermodelBasis {
    /// `1, s, ..., s^d` with `s = l / max landmark`.
    Polynomial(usize),
    /// One indicator per landmark.
    Saturated,
}

impl Default for SupermodelBasis {
    fn default() -> Self {
        SupermodelBasis::Polynomial(2)
    }
}

impl fmt::Display for SupermodelBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupermodelBasis::Polynomial(d) => write!(f, "polynomial degree {d}"),
            SupermodelBasis::Saturated => f.write_str("saturated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupermodelFit<T> {
    pub basis: SupermodelBasis,
    pub fit: LogisticFit<T>,
    pub landmarks: Vec<T>,
    pub window: T,
    pub values: Vec<T>,
    pub skipped: Vec<SkippedLandmark>,
}

impl<T: Real> SupermodelFit<T> {
    pub fn at(&self, landmark: T) -> Option<T> {
        self.landmarks.iter().position(|&l| l == landmark).map(|i| self.values[i])
    }
}

/// Pooled logistic model over the stacked landmark datasets.
///
/// The per-landmark fraction is `(mean p̂ − mean p̂ among unexposed) / mean p̂` over
/// that landmark's rows. Landmarks failing the cell-count rule are left out of the fit.
pub fn paf_lm_supermodel<T: Real>(
    cohort: &Cohort<T>,
    grid: &LandmarkGrid<T>,
    basis: SupermodelBasis,
    options: &LandmarkOptions<T>,
) -> Result<SupermodelFit<T>, PafError> {
    cohort.check_covariates(&options.covariates)?;
    let cov_idx = covariate_indices(cohort, &options.covariates);
    let datasets = landmark_rows(cohort, grid)?;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (rows, &l) in datasets.into_iter().zip(grid.landmarks()) {
        match feasibility(&landmark_table(&rows), options.min_cell) {
            Ok(()) => kept.push((l, rows)),
            Err(reason) => skipped.push(SkippedLandmark {
                landmark: l.to_f64_lossy(),
                reason,
            }),
        }
    }
    if kept.is_empty() {
        return Err(PafError::GridInfeasible(skipped));
    }

    let scale = kept.iter().fold(T::zero(), |m, (l, _)| m.max(*l));
    let scale = if scale > T::zero() { scale } else { T::one() };
    let n_basis = match basis {
        SupermodelBasis::Polynomial(d) => d + 1,
        SupermodelBasis::Saturated => kept.len(),
    };
    let mut names = Vec::with_capacity(2 * n_basis + cov_idx.len());
    match basis {
        SupermodelBasis::Polynomial(d) => {
            names.push("(intercept)".to_string());
            for k in 1..=d {
                names.push(format!("landmark^{k}"));
            }
            names.push("exposure".to_string());
            for k in 1..=d {
                names.push(format!("exposure:landmark^{k}"));
            }
        }
        SupermodelBasis::Saturated => {
            for (l, _) in &kept {
                names.push(format!("landmark[{l}]"));
            }
            for (l, _) in &kept {
                names.push(format!("exposure:landmark[{l}]"));
            }
        }
    }
    names.extend(options.covariates.iter().cloned());

    let features = |li: usize, l: T| -> Vec<(usize, T)> {
        match basis {
            SupermodelBasis::Polynomial(d) => {
                let s = l / scale;
                (0..=d).map(|k| (k, s.powi(k as i32))).collect()
            }
            SupermodelBasis::Saturated => vec![(li, T::one())],
        }
    };
    let row_entries = |li: usize, l: T, exposed: bool, z: &[T]| -> Vec<(usize, T)> {
        let base = features(li, l);
        let mut e = base.clone();
        if exposed {
            e.extend(base.iter().map(|&(j, v)| (j + n_basis, v)));
        }
        for (k, &i) in cov_idx.iter().enumerate() {
            e.push((2 * n_basis + k, z[i]));
        }
        e
    };

    let mut design = DesignMatrix::new(names)?;
    for (li, (l, rows)) in kept.iter().enumerate() {
        for r in rows {
            design.push_sparse_row(&row_entries(li, *l, r.exposed, &r.covariates), r.died, T::one())?;
        }
    }
    let fit = fit_logistic(&design, &options.fit)?;
    if !fit.converged {
        return Err(PafError::NotConverged {
            what: format!("supermodel ({basis})"),
        });
    }

    let predict = |entries: &[(usize, T)]| expit(entries.iter().map(|&(j, v)| v * fit.coefficients[j]).sum());
    let mut landmarks = Vec::with_capacity(kept.len());
    let mut values = Vec::with_capacity(kept.len());
    for (li, (l, rows)) in kept.iter().enumerate() {
        let mut all = T::zero();
        let mut unexposed = T::zero();
        let mut n_unexposed = 0usize;
        for r in rows {
            let p = predict(&row_entries(li, *l, r.exposed, &r.covariates));
            all += p;
            if !r.exposed {
                unexposed += p;
                n_unexposed += 1;
            }
        }
        let mean = all / T::count(rows.len());
        let mean0 = unexposed / T::count(n_unexposed);
        landmarks.push(*l);
        values.push((mean - mean0) / mean);
    }
    Ok(SupermodelFit {
        basis,
        fit,
        landmarks,
        window: grid.window(),
        values,
        skipped,
    })
}
