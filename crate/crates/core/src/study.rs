//! Replicated simulate-then-estimate runs summarized per time point or landmark.

use std::io::Write;

use rayon::prelude::*;

use crate::cohortsim::{simulate_replicate, Scenario, SimError};
use crate::eventstore::{fourfold_table, Cohort, LandmarkGrid};
use crate::paf::{
    estimate_paf_c, estimate_paf_o, paf_crude, paf_lm_separate, paf_lm_supermodel, LandmarkOptions, PafError,
    SupermodelBasis,
};
use crate::real::{quantile_sorted, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions<T> {
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    /// Landmark grid; `None` uses [`default_landmarks`] with the scenario window.
    pub landmarks: Option<LandmarkGrid<T>>,
    /// Curves are summarized at integer times `0..=min(τ_max, grid_max)`.
    pub grid_max: T,
    pub basis: SupermodelBasis,
    pub landmark_options: LandmarkOptions<T>,
}

impl<T: Real> StudyOptions<T> {
    pub fn new(reps: usize, n: usize, seed: u64) -> Self {
        StudyOptions {
            reps,
            n,
            seed,
            landmarks: None,
            grid_max: T::lit(200.0),
            basis: SupermodelBasis::default(),
            landmark_options: LandmarkOptions::default(),
        }
    }
}

/// `step, 2·step, ..., 2h` with `step = max(1, round(h / 10))`.
pub fn default_landmarks<T: Real>(window: T) -> Result<LandmarkGrid<T>, crate::eventstore::DataError> {
    let step = (window / T::lit(10.0)).round().max(T::one());
    LandmarkGrid::from_range(step, window + window, step, window)
}

/// Estimates from one replicate on the shared grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimates<T> {
    pub tau: T,
    pub crude: Option<T>,
    pub paf_o: Vec<Option<T>>,
    pub paf_c: Vec<Option<T>>,
    pub lm_separate: Vec<Option<T>>,
    pub lm_supermodel: Vec<Option<T>>,
}

/// Every estimand of one cohort on the curve grid and landmark grid.
pub fn estimate_replicate<T: Real>(
    cohort: &Cohort<T>,
    curve_grid: &[T],
    landmarks: &LandmarkGrid<T>,
    basis: SupermodelBasis,
    options: &LandmarkOptions<T>,
) -> Result<ReplicateEstimates<T>, PafError> {
    let crude = fourfold_table(cohort).ok().and_then(|t| paf_crude(&t).ok());
    let paf_o = estimate_paf_o(cohort)?.on_grid(curve_grid);
    let paf_c = estimate_paf_c(cohort, &[], &Default::default())?.on_grid(curve_grid);
    let lm_separate = match paf_lm_separate(cohort, landmarks, options) {
        Ok(a) => landmarks
            .landmarks()
            .iter()
            .map(|&l| a.estimates.iter().find(|e| e.landmark == l).map(|e| e.paf))
            .collect(),
        Err(e) => {
            log::warn!("separate landmark models failed: {e}");
            vec![None; landmarks.landmarks().len()]
        }
    };
    let lm_supermodel = match paf_lm_supermodel(cohort, landmarks, basis, options) {
        Ok(s) => landmarks.landmarks().iter().map(|&l| s.at(l)).collect(),
        Err(e) => {
            log::warn!("supermodel failed: {e}");
            vec![None; landmarks.landmarks().len()]
        }
    };
    Ok(ReplicateEstimates {
        tau: cohort.tau(),
        crude,
        paf_o,
        paf_c,
        lm_separate,
        lm_supermodel,
    })
}

/// Mean and quartiles over the replicates where the value is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow<T> {
    pub estimand: &'static str,
    pub model: Option<&'static str>,
    pub time: Option<T>,
    pub mean: Option<T>,
    pub q1: Option<T>,
    pub median: Option<T>,
    pub q3: Option<T>,
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary<T> {
    pub scenario: u32,
    pub n: usize,
    pub reps: usize,
    pub window: T,
    pub rows: Vec<StudyRow<T>>,
    pub replicates: Vec<ReplicateEstimates<T>>,
}

impl<T: Real> StudySummary<T> {
    pub fn rows_for(&self, estimand: &str, model: Option<&str>) -> Vec<&StudyRow<T>> {
        self.rows
            .iter()
            .filter(|r| r.estimand == estimand && r.model == model)
            .collect()
    }
}

fn summarize<T: Real>(
    estimand: &'static str,
    model: Option<&'static str>,
    time: Option<T>,
    values: impl Iterator<Item = Option<T>>,
) -> StudyRow<T> {
    let mut v: Vec<T> = values.flatten().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let defined = v.len();
    let stat = |q: f64| (!v.is_empty()).then(|| quantile_sorted(&v, T::lit(q)));
    let mean = (!v.is_empty()).then(|| v.iter().copied().sum::<T>() / T::count(defined));
    StudyRow {
        estimand,
        model,
        time,
        mean,
        q1: stat(0.25),
        median: stat(0.5),
        q3: stat(0.75),
        defined,
    }
}

/// Runs `reps` independent replicates of `scenario`; replicate `r` simulates from
/// substream `r`, so replicate 0 is the cohort a single simulation with the same seed
/// produces.
pub fn run_study<T: Real>(scenario: &Scenario<T>, options: &StudyOptions<T>) -> Result<StudySummary<T>, PafError> {
    if options.reps == 0 {
        return Err(PafError::Argument("reps must be >= 1".into()));
    }
    if options.n == 0 {
        return Err(PafError::Argument("n must be >= 1".into()));
    }
    let reps = u32::try_from(options.reps).map_err(|_| PafError::Argument("too many reps".into()))?;
    let landmarks = match &options.landmarks {
        Some(g) => g.clone(),
        None => default_landmarks(scenario.default_window)?,
    };
    let last = options.grid_max.floor().to_usize().unwrap_or(0);
    let full_grid: Vec<T> = (0..=last).map(T::count).collect();

    let replicates: Vec<ReplicateEstimates<T>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let cohort = simulate_replicate(&scenario.hazards, options.n, options.seed, r).map_err(|e| match e {
                SimError::Data(d) => PafError::Data(d),
                other => PafError::Argument(other.to_string()),
            })?;
            estimate_replicate(&cohort, &full_grid, &landmarks, options.basis, &options.landmark_options)
        })
        .collect::<Result<_, _>>()?;

    let tau_max = replicates.iter().fold(T::zero(), |m, r| m.max(r.tau));
    let n_points = full_grid.iter().filter(|&&t| t <= tau_max).count();

    let mut rows = vec![summarize("crude", None, None, replicates.iter().map(|r| r.crude))];
    for (name, pick) in [
        ("paf_o", (|r: &ReplicateEstimates<T>| &r.paf_o) as fn(&ReplicateEstimates<T>) -> &Vec<Option<T>>),
        ("paf_c", |r: &ReplicateEstimates<T>| &r.paf_c),
    ] {
        for (i, &t) in full_grid.iter().enumerate().take(n_points) {
            rows.push(summarize(name, None, Some(t), replicates.iter().map(|r| pick(r)[i])));
        }
    }
    for (model, pick) in [
        ("separate", (|r: &ReplicateEstimates<T>| &r.lm_separate) as fn(&ReplicateEstimates<T>) -> &Vec<Option<T>>),
        ("supermodel", |r: &ReplicateEstimates<T>| &r.lm_supermodel),
    ] {
        for (i, &l) in landmarks.landmarks().iter().enumerate() {
            rows.push(summarize("paf_lm", Some(model), Some(l), replicates.iter().map(|r| pick(r)[i])));
        }
    }
    Ok(StudySummary {
        scenario: scenario.id,
        n: options.n,
        reps: options.reps,
        window: landmarks.window(),
        rows,
        replicates,
    })
}

/// Writes `scenario,n,reps,estimand,model,time_or_landmark,mean,q1,median,q3,defined`.
pub fn write_summary<T: Real, W: Write>(summary: &StudySummary<T>, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "scenario",
        "n",
        "reps",
        "estimand",
        "model",
        "time_or_landmark",
        "mean",
        "q1",
        "median",
        "q3",
        "defined",
    ])?;
    let na = |v: Option<T>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in &summary.rows {
        wtr.write_record([
            summary.scenario.to_string(),
            summary.n.to_string(),
            summary.reps.to_string(),
            r.estimand.to_string(),
            r.model.unwrap_or("").to_string(),
            r.time.map(|t| t.to_string()).unwrap_or_default(),
            na(r.mean),
            na(r.q1),
            na(r.median),
            na(r.q3),
            r.defined.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
