use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::landmark::{paf_lm_separate, LandmarkOptions};
use super::supermodel::{paf_lm_supermodel, SupermodelBasis};
use super::{estimate_paf_c, estimate_paf_o, paf_crude, paf_crude_adjusted, PafError};
use crate::eventstore::{fourfold_table, Cohort, LandmarkGrid};
use crate::glm::IpwOptions;
use crate::real::{quantile_sorted, Real};

/// The estimator to recompute on each bootstrap sample.
#[derive(Debug, Clone, PartialEq)]
pub enum BootstrapTarget<T> {
    Crude { covariates: Vec<String> },
    PafO,
    PafC { covariates: Vec<String>, ipw: IpwOptions<T> },
    LmSeparate { grid: LandmarkGrid<T>, options: LandmarkOptions<T> },
    LmSupermodel { grid: LandmarkGrid<T>, basis: SupermodelBasis, options: LandmarkOptions<T> },
}

impl<T: Real> BootstrapTarget<T> {
    /// Points at which the estimate is reported: `eval` for curves, the landmarks for
    /// landmark estimators, the end of follow-up for the crude fraction.
    pub fn points(&self, cohort: &Cohort<T>, eval: &[T]) -> Vec<T> {
        match self {
            BootstrapTarget::Crude { .. } => vec![cohort.tau()],
            BootstrapTarget::PafO | BootstrapTarget::PafC { .. } => eval.to_vec(),
            BootstrapTarget::LmSeparate { grid, .. } | BootstrapTarget::LmSupermodel { grid, .. } => {
                grid.landmarks().to_vec()
            }
        }
    }

    /// Point estimates aligned with [`BootstrapTarget::points`].
    pub fn evaluate(&self, cohort: &Cohort<T>, eval: &[T]) -> Result<Vec<Option<T>>, PafError> {
        match self {
            BootstrapTarget::Crude { covariates } => {
                let v = if covariates.is_empty() {
                    paf_crude(&fourfold_table(cohort)?)?
                } else {
                    paf_crude_adjusted(cohort, covariates, &Default::default())?.paf
                };
                Ok(vec![Some(v)])
            }
            BootstrapTarget::PafO => Ok(estimate_paf_o(cohort)?.on_grid(eval)),
            BootstrapTarget::PafC { covariates, ipw } => Ok(estimate_paf_c(cohort, covariates, ipw)?.on_grid(eval)),
            BootstrapTarget::LmSeparate { grid, options } => {
                let a = paf_lm_separate(cohort, grid, options)?;
                Ok(grid
                    .landmarks()
                    .iter()
                    .map(|&l| a.estimates.iter().find(|e| e.landmark == l).map(|e| e.paf))
                    .collect())
            }
            BootstrapTarget::LmSupermodel { grid, basis, options } => {
                let s = paf_lm_supermodel(cohort, grid, *basis, options)?;
                Ok(grid.landmarks().iter().map(|&l| s.at(l)).collect())
            }
        }
    }
}

/// Pointwise percentile band.
#[derive(Debug, Clone, PartialEq)]
pub struct Band<T> {
    pub points: Vec<T>,
    pub lower: Vec<Option<T>>,
    pub upper: Vec<Option<T>>,
    /// Replicates that produced an estimate.
    pub replicates: usize,
    pub failed: usize,
}

/// Draws `n` patients with replacement; ids are made unique by the draw position.
pub fn resample<T: Real, R: Rng>(cohort: &Cohort<T>, rng: &mut R) -> Result<Cohort<T>, PafError> {
    let n = cohort.len();
    let patients = cohort.patients();
    let drawn = (0..n)
        .map(|k| {
            let mut p = patients[rng.random_range(0..n)].clone();
            p.id = format!("{}~{k}", p.id);
            p
        })
        .collect();
    Ok(Cohort::new(drawn)?.with_tau(cohort.tau())?)
}

/// Percentile bootstrap band from `b` patient resamples.
///
/// Replicate `k` draws from ChaCha stream `k` of `seed`, so the band depends only on
/// `(seed, b)`. Failed replicates are dropped; more than 10% failures is an error.
pub fn bootstrap_band<T: Real>(
    target: &BootstrapTarget<T>,
    cohort: &Cohort<T>,
    eval: &[T],
    b: usize,
    level: T,
    seed: u64,
) -> Result<Band<T>, PafError> {
    if b == 0 {
        return Err(PafError::Argument("bootstrap replicates must be >= 1".into()));
    }
    if !(level > T::zero() && level < T::one()) {
        return Err(PafError::Argument(format!("level must lie in (0, 1), got {level}")));
    }
    if cohort.is_empty() {
        return Err(PafError::Argument("cohort is empty".into()));
    }
    let points = target.points(cohort, eval);
    let draws: Vec<Option<Vec<Option<T>>>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let sample = resample(cohort, &mut rng).ok()?;
            target.evaluate(&sample, eval).ok()
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 10 > b {
        return Err(PafError::BootstrapFailures { failed, total: b });
    }
    if failed > 0 {
        log::warn!("{failed} of {b} bootstrap replicates failed and were dropped");
    }
    let ok: Vec<&Vec<Option<T>>> = draws.iter().flatten().collect();
    let alpha = (T::one() - level) / (T::one() + T::one());
    let mut lower = Vec::with_capacity(points.len());
    let mut upper = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let mut v: Vec<T> = ok.iter().filter_map(|d| d[i]).collect();
        if v.is_empty() {
            lower.push(None);
            upper.push(None);
            continue;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(Some(quantile_sorted(&v, alpha)));
        upper.push(Some(quantile_sorted(&v, T::one() - alpha)));
    }
    Ok(Band {
        points,
        lower,
        upper,
        replicates: ok.len(),
        failed,
    })
}
