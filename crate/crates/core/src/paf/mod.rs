//! The four attributable-fraction estimands: crude (end of stay), observable `PAF_o(t)`,
//! causal `PAF_c(t)` and landmark `PAF(l, h)`, with bootstrap bands.

mod bootstrap;
mod landmark;
mod results;
mod smoothing;
mod supermodel;

pub use bootstrap::{bootstrap_band, resample, Band, BootstrapTarget};
pub use landmark::{paf_lm_separate, LandmarkAnalysis, LandmarkEstimate, LandmarkOptions, SkippedLandmark};
pub use results::{write_results, ResultRow};
pub use smoothing::{default_bandwidth, local_linear, smooth_landmarks};
pub use supermodel::{paf_lm_supermodel, SupermodelBasis, SupermodelFit};

use std::fmt;

use thiserror::Error;

use crate::ajestimator::{
    aalen_johansen, cif_censor_at_exposure, cif_censor_at_exposure_weighted, CensoredCif, EstimatorError,
    TransitionCurves,
};
use crate::eventstore::{fourfold_table, Cohort, DataError, FourfoldTable};
use crate::glm::{ipw_uninfected_weights, paf_greenland_drescher, AdjustedPaf, FitOptions, GlmError, IpwOptions};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum PafError {
    #[error("estimand undefined: {0}")]
    Undefined(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("landmark grid infeasible: every landmark was skipped ({})", format_skipped(.0))]
    GridInfeasible(Vec<SkippedLandmark>),
    #[error("{what} did not converge")]
    NotConverged { what: String },
    #[error("{failed} of {total} bootstrap replicates failed (more than 10%)")]
    BootstrapFailures { failed: usize, total: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Glm(#[from] GlmError),
}

fn format_skipped(skipped: &[SkippedLandmark]) -> String {
    skipped
        .iter()
        .map(|s| format!("l={}: {}", s.landmark, s.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimand {
    Crude,
    PafO,
    PafC,
    PafLm,
}

impl Estimand {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Crude => "crude",
            Estimand::PafO => "paf_o",
            Estimand::PafC => "paf_c",
            Estimand::PafLm => "paf_lm",
        }
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(P(D=1) − P(D=1|E=0)) / P(D=1)` from a fourfold table.
pub fn paf_crude<T: Real>(table: &FourfoldTable) -> Result<T, PafError> {
    if table.total() == 0 {
        return Err(PafError::Argument("fourfold table is empty".into()));
    }
    if table.unexposed() == 0 {
        return Err(PafError::Undefined("no unexposed patients".into()));
    }
    if table.deaths() == 0 {
        return Err(PafError::Undefined("no deaths".into()));
    }
    let c = |v: u64| T::lit(v as f64);
    let p = c(table.deaths()) / c(table.total());
    let p0 = c(table.n_unexp_died) / c(table.unexposed());
    Ok((p - p0) / p)
}

/// Deaths attributable to the exposure, `round(PAF × deaths)`.
pub fn attributable_cases<T: Real>(table: &FourfoldTable) -> Result<u64, PafError> {
    let paf: T = paf_crude(table)?;
    let cases = (paf * T::lit(table.deaths() as f64)).round();
    Ok(cases.max(T::zero()).to_u64().unwrap_or(0))
}

/// Crude fraction adjusted for baseline covariates by the Greenland-Drescher estimator.
pub fn paf_crude_adjusted<T: Real>(
    cohort: &Cohort<T>,
    covariates: &[String],
    options: &FitOptions<T>,
) -> Result<AdjustedPaf<T>, PafError> {
    fourfold_table(cohort)?;
    cohort.check_covariates(covariates)?;
    let idx = covariate_indices(cohort, covariates);
    let exposed: Vec<bool> = cohort.patients().iter().map(|p| p.is_infected()).collect();
    let died: Vec<bool> = cohort.patients().iter().map(|p| p.died()).collect();
    let rows: Vec<Vec<T>> = cohort
        .patients()
        .iter()
        .map(|p| {
            let all: Vec<T> = p.covariates.values().copied().collect();
            idx.iter().map(|&i| all[i]).collect()
        })
        .collect();
    Ok(paf_greenland_drescher(&exposed, &died, &rows, covariates, options)?)
}

pub(crate) fn covariate_indices<T: Real>(cohort: &Cohort<T>, names: &[String]) -> Vec<usize> {
    names
        .iter()
        .filter_map(|n| cohort.covariate_names().iter().position(|c| c == n))
        .collect()
}

/// A PAF curve over time; `None` where the death probability is still zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PafCurve<T> {
    pub estimand: Estimand,
    pub times: Vec<T>,
    pub values: Vec<Option<T>>,
    pub lower: Option<Vec<Option<T>>>,
    pub upper: Option<Vec<Option<T>>>,
    pub n: usize,
}

impl<T: Real> PafCurve<T> {
    /// Value at `t`, carrying the last jump forward; `None` before the first death.
    pub fn at(&self, t: T) -> Option<T> {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            None
        } else {
            self.values[idx - 1]
        }
    }

    pub fn last(&self) -> Option<T> {
        self.values.last().copied().flatten()
    }

    /// Evaluates the curve on a grid.
    pub fn on_grid(&self, grid: &[T]) -> Vec<Option<T>> {
        grid.iter().map(|&t| self.at(t)).collect()
    }
}

fn observable_at<T: Real>(p: &[T; 6]) -> Option<T> {
    let death = p[3] + p[5];
    let alive_or_dead_unexposed = p[0] + p[2] + p[3];
    if death <= T::zero() || alive_or_dead_unexposed <= T::zero() {
        return None;
    }
    let conditional = p[3] / alive_or_dead_unexposed;
    Some(T::one() - conditional / death)
}

/// `PAF_o(t) = 1 − P(D(t)=1 | E(t)=0) / P(D(t)=1)` at every jump of the curves.
pub fn paf_o_curve<T: Real>(curves: &TransitionCurves<T>) -> PafCurve<T> {
    PafCurve {
        estimand: Estimand::PafO,
        times: curves.times().to_vec(),
        values: curves.probabilities().iter().map(observable_at).collect(),
        lower: None,
        upper: None,
        n: curves.n(),
    }
}

/// `PAF_c(t) = (P03 + P05 − P03_0) / (P03 + P05)` on the union of both jump grids.
pub fn paf_c_curve<T: Real>(curves: &TransitionCurves<T>, cif: &CensoredCif<T>) -> Result<PafCurve<T>, PafError> {
    if curves.n() != cif.n() {
        return Err(PafError::Argument(format!(
            "curves from {} patients, incidence from {}",
            curves.n(),
            cif.n()
        )));
    }
    let mut times: Vec<T> = curves.times().iter().chain(cif.times()).copied().collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let values = times
        .iter()
        .map(|&t| {
            let p = curves.at(t);
            let death = p[3] + p[5];
            (death > T::zero()).then(|| (death - cif.p03_0_at(t)) / death)
        })
        .collect();
    Ok(PafCurve {
        estimand: Estimand::PafC,
        times,
        values,
        lower: None,
        upper: None,
        n: curves.n(),
    })
}

/// `PAF_o` straight from a cohort.
pub fn estimate_paf_o<T: Real>(cohort: &Cohort<T>) -> Result<PafCurve<T>, PafError> {
    Ok(paf_o_curve(&aalen_johansen(cohort)?))
}

/// `PAF_c` from a cohort; with covariates the infection-free incidence is weighted by
/// inverse probabilities of remaining uninfected.
pub fn estimate_paf_c<T: Real>(
    cohort: &Cohort<T>,
    covariates: &[String],
    ipw: &IpwOptions<T>,
) -> Result<PafCurve<T>, PafError> {
    let curves = aalen_johansen(cohort)?;
    let cif = if covariates.is_empty() {
        cif_censor_at_exposure(cohort)?
    } else {
        let weights = ipw_uninfected_weights(cohort, covariates, ipw)?;
        cif_censor_at_exposure_weighted(cohort, &weights)?
    };
    paf_c_curve(&curves, &cif)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ajestimator::{aalen_johansen, cif_censor_at_exposure};
    use crate::eventstore::{ExitState, PatientHistory};

    #[test]
    fn crude_examples() {
        let rr = FourfoldTable::new(2746, 8320 - 2746, 22203, 71027 - 22203);
        let paf: f64 = paf_crude(&rr).unwrap();
        assert!((paf - 0.005_818_778_667).abs() < 1e-11);
        assert_eq!(attributable_cases::<f64>(&rr).unwrap(), 145);
        let same = FourfoldTable::new(10, 30, 20, 60);
        assert!(paf_crude::<f64>(&same).unwrap().abs() < 1e-15);
        assert_eq!(paf_crude::<f64>(&FourfoldTable::new(1, 0, 0, 1)).unwrap(), 1.0);
        assert!(matches!(
            paf_crude::<f64>(&FourfoldTable::new(0, 3, 0, 4)),
            Err(PafError::Undefined(_))
        ));
        assert!(paf_crude::<f64>(&FourfoldTable::new(1, 3, 0, 0)).is_err());
    }

    fn toy() -> Cohort<f64> {
        Cohort::new(vec![
            PatientHistory::new("1", None, 2.0, ExitState::Death),
            PatientHistory::new("2", Some(1.0), 4.0, ExitState::Death),
            PatientHistory::new("3", None, 3.0, ExitState::Discharge),
            PatientHistory::new("4", Some(2.5), 5.0, ExitState::Discharge),
            PatientHistory::new("5", None, 6.0, ExitState::Death),
        ])
        .unwrap()
    }

    #[test]
    fn observable_curve_ends_at_crude() {
        let c = toy();
        let crude: f64 = paf_crude(&fourfold_table(&c).unwrap()).unwrap();
        let curve = paf_o_curve(&aalen_johansen(&c).unwrap());
        assert!((curve.last().unwrap() - crude).abs() < 1e-12);
        assert_eq!(curve.at(1.0), None);
        assert!(curve.at(2.0).is_some());
    }

    #[test]
    fn no_infection_gives_zero() {
        let c = Cohort::new(vec![
            PatientHistory::new("1", None, 2.0, ExitState::Death),
            PatientHistory::new("2", None, 3.0, ExitState::Discharge),
            PatientHistory::new("3", None, 4.0, ExitState::Death),
        ])
        .unwrap();
        let aj: TransitionCurves<f64> = aalen_johansen(&c).unwrap();
        let o = paf_o_curve(&aj);
        let pc = paf_c_curve(&aj, &cif_censor_at_exposure(&c).unwrap()).unwrap();
        for v in o.values.iter().chain(&pc.values).flatten() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let c = toy();
        let other = Cohort::new(vec![PatientHistory::new("1", None, 2.0, ExitState::Death)]).unwrap();
        let r = paf_c_curve(&aalen_johansen(&c).unwrap(), &cif_censor_at_exposure(&other).unwrap());
        assert!(matches!(r, Err(PafError::Argument(_))));
    }
}
