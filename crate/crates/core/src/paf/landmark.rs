use rayon::prelude::*;

use super::{covariate_indices, paf_crude, PafError};
use crate::eventstore::{landmark_dataset, landmark_table, Cohort, FourfoldTable, LandmarkGrid, LandmarkRow};
use crate::glm::{paf_greenland_drescher, FitOptions};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkOptions<T> {
    /// A landmark is kept only if every exposure-by-outcome cell has at least this many patients.
    pub min_cell: u64,
    /// Baseline covariates for Greenland-Drescher adjustment; empty means unadjusted.
    pub covariates: Vec<String>,
    pub fit: FitOptions<T>,
}

impl<T: Real> Default for LandmarkOptions<T> {
    fn default() -> Self {
        LandmarkOptions {
            min_cell: 5,
            covariates: Vec::new(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkEstimate<T> {
    pub landmark: T,
    pub window: T,
    pub paf: T,
    /// Risk of death in the window among the exposed over that among the unexposed.
    pub rr: T,
    /// Share of the window's deaths that were exposed at the landmark.
    pub prevalence_among_cases: T,
    pub table: FourfoldTable,
    /// Delta-method variance (adjusted estimates only).
    pub variance: Option<T>,
    pub lower: Option<T>,
    pub upper: Option<T>,
}

impl<T: Real> LandmarkEstimate<T> {
    /// The same fraction through `P_E · (RR − 1) / RR`.
    pub fn paf_from_rr(&self) -> T {
        self.prevalence_among_cases * (self.rr - T::one()) / self.rr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLandmark {
    pub landmark: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkAnalysis<T> {
    pub estimates: Vec<LandmarkEstimate<T>>,
    pub skipped: Vec<SkippedLandmark>,
}

pub(crate) fn feasibility(table: &FourfoldTable, min_cell: u64) -> Result<(), String> {
    if table.exposed() == 0 {
        return Err("no exposed patients at risk".into());
    }
    if table.unexposed() == 0 {
        return Err("no unexposed patients at risk".into());
    }
    if table.deaths() == 0 {
        return Err("no deaths in the window".into());
    }
    if table.min_cell() < min_cell {
        return Err(format!(
            "cell counts (exposed {}/{}, unexposed {}/{}) below {min_cell}",
            table.n_exp_died, table.n_exp_surv, table.n_unexp_died, table.n_unexp_surv
        ));
    }
    Ok(())
}

/// Landmark datasets of the grid, in grid order.
pub(crate) fn landmark_rows<T: Real>(
    cohort: &Cohort<T>,
    grid: &LandmarkGrid<T>,
) -> Result<Vec<Vec<LandmarkRow<T>>>, PafError> {
    grid.landmarks()
        .iter()
        .map(|&l| landmark_dataset(cohort, l, grid.window()).map_err(PafError::from))
        .collect()
}

fn estimate_one<T: Real>(
    rows: &[LandmarkRow<T>],
    landmark: T,
    window: T,
    cov_idx: &[usize],
    options: &LandmarkOptions<T>,
) -> Result<Result<LandmarkEstimate<T>, String>, PafError> {
    let table = landmark_table(rows);
    if let Err(reason) = feasibility(&table, options.min_cell) {
        return Ok(Err(reason));
    }
    let c = |v: u64| T::lit(v as f64);
    let risk1 = c(table.n_exp_died) / c(table.exposed());
    let risk0 = c(table.n_unexp_died) / c(table.unexposed());
    let rr = risk1 / risk0;
    let prevalence = c(table.n_exp_died) / c(table.deaths());
    let (paf, variance) = if options.covariates.is_empty() {
        (paf_crude(&table)?, None)
    } else {
        let exposed: Vec<bool> = rows.iter().map(|r| r.exposed).collect();
        let died: Vec<bool> = rows.iter().map(|r| r.died).collect();
        let z: Vec<Vec<T>> = rows
            .iter()
            .map(|r| cov_idx.iter().map(|&i| r.covariates[i]).collect())
            .collect();
        match paf_greenland_drescher(&exposed, &died, &z, &options.covariates, &options.fit) {
            Ok(est) => (est.paf, Some(est.variance)),
            Err(e) => return Ok(Err(format!("adjusted model failed: {e}"))),
        }
    };
    Ok(Ok(LandmarkEstimate {
        landmark,
        window,
        paf,
        rr,
        prevalence_among_cases: prevalence,
        table,
        variance,
        lower: None,
        upper: None,
    }))
}

/// One fourfold (or adjusted) fraction per landmark.
///
/// Landmarks that fail the cell-count rule are skipped and reported; if all are
/// skipped the grid is infeasible.
pub fn paf_lm_separate<T: Real>(
    cohort: &Cohort<T>,
    grid: &LandmarkGrid<T>,
    options: &LandmarkOptions<T>,
) -> Result<LandmarkAnalysis<T>, PafError> {
    cohort.check_covariates(&options.covariates)?;
    let cov_idx = covariate_indices(cohort, &options.covariates);
    let datasets = landmark_rows(cohort, grid)?;
    let outcomes: Vec<_> = datasets
        .par_iter()
        .zip(grid.landmarks().par_iter())
        .map(|(rows, &l)| estimate_one(rows, l, grid.window(), &cov_idx, options))
        .collect::<Result<_, _>>()?;
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for (outcome, &l) in outcomes.into_iter().zip(grid.landmarks()) {
        match outcome {
            Ok(e) => estimates.push(e),
            Err(reason) => skipped.push(SkippedLandmark {
                landmark: l.to_f64_lossy(),
                reason,
            }),
        }
    }
    if estimates.is_empty() {
        return Err(PafError::GridInfeasible(skipped));
    }
    Ok(LandmarkAnalysis { estimates, skipped })
}
