//! Patient event histories: validation, file round trips, fourfold tables and
//! landmark datasets.
//!
//! The on-disk format is comma-delimited text with header
//! `id,infection_time,exit_time,exit_state,censored[,covariate...]`. An empty
//! `infection_time` means the patient was never infected; `exit_state` is
//! `discharge` or `death`; `censored` is `0` or `1`. Times are written in the
//! shortest decimal form that parses back to the same value.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::real::Real;

pub const BASE_COLUMNS: [&str; 5] = ["id", "infection_time", "exit_time", "exit_state", "censored"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("duplicate patient id '{0}'")]
    DuplicateId(String),
    #[error("patient '{id}' is invalid: {violations}")]
    Invalid { id: String, violations: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error(
        "patient '{0}' is censored; the crude fraction is undefined under censoring \
         (use the observable curve at the end of follow-up instead)"
    )]
    CensoredForCrude(String),
    #[error("patient '{id}' is censored at {time} inside the landmark window ({start}, {end}]")]
    CensoredInWindow {
        id: String,
        time: f64,
        start: f64,
        end: f64,
    },
    #[error("patients disagree on covariate columns: '{0}'")]
    CovariateMismatch(String),
    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),
    #[error("end of follow-up {tau} precedes the last exit time {last}")]
    TauTooSmall { tau: f64, last: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExitState {
    Discharge,
    Death,
}

impl ExitState {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitState::Discharge => "discharge",
            ExitState::Death => "death",
        }
    }
}

impl std::str::FromStr for ExitState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "discharge" => Ok(ExitState::Discharge),
            "death" => Ok(ExitState::Death),
            other => Err(format!("exit_state must be 'discharge' or 'death', got '{other}'")),
        }
    }
}

/// One patient's path through the extended illness-death model.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientHistory<T> {
    pub id: String,
    /// Time of infection; the patient is exposed at `t` iff `infection_time <= t`.
    pub infection_time: Option<T>,
    pub exit_time: T,
    /// Ignored when `censored` is set.
    pub exit_state: ExitState,
    /// `exit_time` is a censoring time.
    pub censored: bool,
    pub covariates: BTreeMap<String, T>,
}

impl<T: Real> PatientHistory<T> {
    pub fn new(id: impl Into<String>, infection_time: Option<T>, exit_time: T, exit_state: ExitState) -> Self {
        PatientHistory {
            id: id.into(),
            infection_time,
            exit_time,
            exit_state,
            censored: false,
            covariates: BTreeMap::new(),
        }
    }

    pub fn censored_at(id: impl Into<String>, infection_time: Option<T>, time: T) -> Self {
        PatientHistory {
            censored: true,
            ..Self::new(id, infection_time, time, ExitState::Discharge)
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: T) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn is_infected(&self) -> bool {
        self.infection_time.is_some()
    }

    /// Exposure status `E(t)`.
    pub fn exposed_at(&self, t: T) -> bool {
        matches!(self.infection_time, Some(inf) if inf <= t)
    }

    /// Observed death (uncensored).
    pub fn died(&self) -> bool {
        !self.censored && self.exit_state == ExitState::Death
    }

    /// Multi-state model state occupied at time `t` (0..=5), or `None` once censored.
    pub fn state_at(&self, t: T) -> Option<usize> {
        if t >= self.exit_time {
            if self.censored {
                return None;
            }
            let infected = self.is_infected();
            return Some(match (infected, self.exit_state) {
                (false, ExitState::Discharge) => 2,
                (false, ExitState::Death) => 3,
                (true, ExitState::Discharge) => 4,
                (true, ExitState::Death) => 5,
            });
        }
        Some(if self.exposed_at(t) { 1 } else { 0 })
    }

    pub fn scaled(&self, factor: T) -> Self {
        PatientHistory {
            infection_time: self.infection_time.map(|t| t * factor),
            exit_time: self.exit_time * factor,
            ..self.clone()
        }
    }
}

/// A violated history invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyId,
    NonPositiveExit,
    NonFiniteTime,
    NonPositiveInfection,
    InfectionAfterExit,
    NonFiniteCovariate(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyId => write!(f, "id is empty"),
            Violation::NonPositiveExit => write!(f, "exit_time <= 0"),
            Violation::NonFiniteTime => write!(f, "time is not finite"),
            Violation::NonPositiveInfection => write!(f, "infection_time <= 0"),
            Violation::InfectionAfterExit => write!(f, "infection_time > exit_time"),
            Violation::NonFiniteCovariate(name) => write!(f, "covariate '{name}' is not finite"),
        }
    }
}

/// Lists every invariant `history` violates; empty means valid.
///
/// An infection at exactly the exit time is allowed and counts as exposure before exit.
pub fn validate<T: Real>(history: &PatientHistory<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    if history.id.is_empty() {
        out.push(Violation::EmptyId);
    }
    if !history.exit_time.is_finite() {
        out.push(Violation::NonFiniteTime);
    } else if history.exit_time <= T::zero() {
        out.push(Violation::NonPositiveExit);
    }
    if let Some(inf) = history.infection_time {
        if !inf.is_finite() {
            out.push(Violation::NonFiniteTime);
        } else {
            if inf <= T::zero() {
                out.push(Violation::NonPositiveInfection);
            }
            if inf > history.exit_time {
                out.push(Violation::InfectionAfterExit);
            }
        }
    }
    for (name, value) in &history.covariates {
        if !value.is_finite() {
            out.push(Violation::NonFiniteCovariate(name.clone()));
        }
    }
    out
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// An ordered collection of valid histories with end of follow-up `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    patients: Vec<PatientHistory<T>>,
    tau: T,
    covariate_names: Vec<String>,
}

impl<T: Real> Cohort<T> {
    /// Validates every history, checks id uniqueness and covariate consistency;
    /// `tau` is the largest exit time.
    pub fn new(patients: Vec<PatientHistory<T>>) -> Result<Self, DataError> {
        let mut seen = HashSet::with_capacity(patients.len());
        for p in &patients {
            let violations = validate(p);
            if !violations.is_empty() {
                return Err(DataError::Invalid {
                    id: p.id.clone(),
                    violations: join_violations(&violations),
                });
            }
            if !seen.insert(p.id.as_str()) {
                return Err(DataError::DuplicateId(p.id.clone()));
            }
        }
        let covariate_names: Vec<String> = patients
            .first()
            .map(|p| p.covariates.keys().cloned().collect())
            .unwrap_or_default();
        for p in &patients {
            if p.covariates.len() != covariate_names.len()
                || !covariate_names.iter().all(|k| p.covariates.contains_key(k))
            {
                return Err(DataError::CovariateMismatch(p.id.clone()));
            }
        }
        let tau = patients
            .iter()
            .map(|p| p.exit_time)
            .fold(T::zero(), T::max);
        Ok(Cohort {
            patients,
            tau,
            covariate_names,
        })
    }

    /// Overrides the end of follow-up; it may not precede any exit.
    pub fn with_tau(mut self, tau: T) -> Result<Self, DataError> {
        let last = self.max_exit_time();
        if tau < last || !tau.is_finite() {
            return Err(DataError::TauTooSmall {
                tau: tau.to_f64_lossy(),
                last: last.to_f64_lossy(),
            });
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn patients(&self) -> &[PatientHistory<T>] {
        &self.patients
    }

    pub fn into_patients(self) -> Vec<PatientHistory<T>> {
        self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn max_exit_time(&self) -> T {
        self.patients
            .iter()
            .map(|p| p.exit_time)
            .fold(T::zero(), T::max)
    }

    /// Covariate names, sorted.
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_censoring(&self) -> bool {
        self.patients.iter().any(|p| p.censored)
    }

    pub fn infected_count(&self) -> usize {
        self.patients.iter().filter(|p| p.is_infected()).count()
    }

    pub fn death_count(&self) -> usize {
        self.patients.iter().filter(|p| p.died()).count()
    }

    /// Checks that every name is a known covariate.
    pub fn check_covariates(&self, names: &[String]) -> Result<(), DataError> {
        for name in names {
            if !self.covariate_names.contains(name) {
                return Err(DataError::UnknownCovariate(name.clone()));
            }
        }
        Ok(())
    }

    /// Same cohort with every time multiplied by `factor > 0`.
    pub fn rescaled(&self, factor: T) -> Result<Self, DataError> {
        if !(factor > T::zero()) {
            return Err(DataError::Argument(format!("scale factor must be > 0, got {factor}")));
        }
        let scaled = Cohort::new(self.patients.iter().map(|p| p.scaled(factor)).collect())?;
        scaled.with_tau(self.tau * factor)
    }
}

/// Ever-exposed by end-of-stay outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FourfoldTable {
    pub n_exp_died: u64,
    pub n_exp_surv: u64,
    pub n_unexp_died: u64,
    pub n_unexp_surv: u64,
}

impl FourfoldTable {
    pub fn new(n_exp_died: u64, n_exp_surv: u64, n_unexp_died: u64, n_unexp_surv: u64) -> Self {
        FourfoldTable {
            n_exp_died,
            n_exp_surv,
            n_unexp_died,
            n_unexp_surv,
        }
    }

    pub fn total(&self) -> u64 {
        self.n_exp_died + self.n_exp_surv + self.n_unexp_died + self.n_unexp_surv
    }

    pub fn exposed(&self) -> u64 {
        self.n_exp_died + self.n_exp_surv
    }

    pub fn unexposed(&self) -> u64 {
        self.n_unexp_died + self.n_unexp_surv
    }

    pub fn deaths(&self) -> u64 {
        self.n_exp_died + self.n_unexp_died
    }

    pub fn min_cell(&self) -> u64 {
        self.n_exp_died
            .min(self.n_exp_surv)
            .min(self.n_unexp_died)
            .min(self.n_unexp_surv)
    }

    pub fn add(&mut self, exposed: bool, died: bool) {
        match (exposed, died) {
            (true, true) => self.n_exp_died += 1,
            (true, false) => self.n_exp_surv += 1,
            (false, true) => self.n_unexp_died += 1,
            (false, false) => self.n_unexp_surv += 1,
        }
    }
}

/// Cross-classifies ever-infection by death at the end of stay.
pub fn fourfold_table<T: Real>(cohort: &Cohort<T>) -> Result<FourfoldTable, DataError> {
    if cohort.is_empty() {
        return Err(DataError::EmptyCohort);
    }
    let mut table = FourfoldTable::default();
    for p in cohort.patients() {
        if p.censored {
            return Err(DataError::CensoredForCrude(p.id.clone()));
        }
        table.add(p.is_infected(), p.exit_state == ExitState::Death);
    }
    Ok(table)
}

/// One patient at risk at a landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRow<T> {
    pub id: String,
    pub landmark: T,
    /// Infected at or before the landmark.
    pub exposed: bool,
    /// Died within `(l, l + h]`.
    pub died: bool,
    /// Covariate values in the cohort's sorted covariate order.
    pub covariates: Vec<T>,
}

/// Landmark dataset at `l` with window `h`: every patient with `exit_time > l`.
pub fn landmark_dataset<T: Real>(
    cohort: &Cohort<T>,
    landmark: T,
    window: T,
) -> Result<Vec<LandmarkRow<T>>, DataError> {
    if !(landmark >= T::zero()) || !landmark.is_finite() {
        return Err(DataError::Argument(format!("landmark must be >= 0, got {landmark}")));
    }
    if !(window > T::zero()) || !window.is_finite() {
        return Err(DataError::Argument(format!("window must be > 0, got {window}")));
    }
    let end = landmark + window;
    let mut rows = Vec::new();
    for p in cohort.patients() {
        if p.exit_time <= landmark {
            continue;
        }
        let in_window = p.exit_time <= end;
        if p.censored && in_window {
            return Err(DataError::CensoredInWindow {
                id: p.id.clone(),
                time: p.exit_time.to_f64_lossy(),
                start: landmark.to_f64_lossy(),
                end: end.to_f64_lossy(),
            });
        }
        rows.push(LandmarkRow {
            id: p.id.clone(),
            landmark,
            exposed: p.exposed_at(landmark),
            died: in_window && p.died(),
            covariates: p.covariates.values().copied().collect(),
        });
    }
    Ok(rows)
}

/// Fourfold counts of a landmark dataset.
pub fn landmark_table<T: Real>(rows: &[LandmarkRow<T>]) -> FourfoldTable {
    let mut table = FourfoldTable::default();
    for r in rows {
        table.add(r.exposed, r.died);
    }
    table
}

/// The set of landmarks and the prediction window.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkGrid<T> {
    landmarks: Vec<T>,
    window: T,
}

impl<T: Real> LandmarkGrid<T> {
    pub fn new(landmarks: Vec<T>, window: T) -> Result<Self, DataError> {
        if landmarks.is_empty() {
            return Err(DataError::Argument("landmark grid is empty".into()));
        }
        if !(window > T::zero()) || !window.is_finite() {
            return Err(DataError::Argument(format!("window must be > 0, got {window}")));
        }
        if landmarks.iter().any(|l| !(*l >= T::zero()) || !l.is_finite()) {
            return Err(DataError::Argument("landmarks must be finite and >= 0".into()));
        }
        if landmarks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Argument("landmarks must be strictly increasing".into()));
        }
        Ok(LandmarkGrid { landmarks, window })
    }

    /// Inclusive arithmetic sequence `start, start+step, ..., <= end`.
    pub fn from_range(start: T, end: T, step: T, window: T) -> Result<Self, DataError> {
        if !(step > T::zero()) {
            return Err(DataError::Argument(format!("landmark step must be > 0, got {step}")));
        }
        if end < start {
            return Err(DataError::Argument("landmark range end precedes start".into()));
        }
        let slack = step * T::lit(1e-9);
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let l = start + step * T::count(k);
            if l > end + slack {
                break;
            }
            out.push(l);
            k += 1;
        }
        Self::new(out, window)
    }

    /// Parses `A:B:STEP` (inclusive).
    pub fn parse(spec: &str, window: T) -> Result<Self, DataError> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(DataError::Argument(format!(
                "landmark spec must look like A:B:STEP, got '{spec}'"
            )));
        }
        let parse = |s: &str| -> Result<T, DataError> {
            s.trim()
                .parse::<T>()
                .map_err(|_| DataError::Argument(format!("bad number '{s}' in landmark spec")))
        };
        Self::from_range(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?, window)
    }

    pub fn landmarks(&self) -> &[T] {
        &self.landmarks
    }

    pub fn window(&self) -> T {
        self.window
    }
}

fn malformed(line: u64, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        line,
        message: message.into(),
    }
}

/// Reads a cohort from delimited text.
pub fn read_cohort<T: Real, R: Read>(reader: R) -> Result<Cohort<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < BASE_COLUMNS.len()
        || BASE_COLUMNS.iter().zip(headers.iter()).any(|(a, b)| *a != b)
    {
        return Err(malformed(1, format!("header must start with {}", BASE_COLUMNS.join(","))));
    }
    let cov_names: Vec<String> = headers.iter().skip(BASE_COLUMNS.len()).map(String::from).collect();
    {
        let mut seen = HashSet::new();
        for name in &cov_names {
            if name.is_empty() || !seen.insert(name) {
                return Err(malformed(1, format!("bad or duplicate covariate column '{name}'")));
            }
        }
    }

    let mut patients = Vec::new();
    let mut ids = HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |field: &str, what: &str| -> Result<T, DataError> {
            field
                .parse::<T>()
                .map_err(|_| malformed(line, format!("cannot parse {what} '{field}'")))
        };
        let id = record[0].to_string();
        let infection_time = match &record[1] {
            "" => None,
            s => Some(num(s, "infection_time")?),
        };
        let exit_time = num(&record[2], "exit_time")?;
        let exit_state: ExitState = record[3].parse().map_err(|e: String| malformed(line, e))?;
        let censored = match &record[4] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(line, format!("censored must be 0 or 1, got '{other}'"))),
        };
        let mut covariates = BTreeMap::new();
        for (name, value) in cov_names.iter().zip(record.iter().skip(BASE_COLUMNS.len())) {
            covariates.insert(name.clone(), num(value, name)?);
        }
        let history = PatientHistory {
            id,
            infection_time,
            exit_time,
            exit_state,
            censored,
            covariates,
        };
        let violations = validate(&history);
        if !violations.is_empty() {
            return Err(malformed(line, join_violations(&violations)));
        }
        if !ids.insert(history.id.clone()) {
            return Err(malformed(line, format!("duplicate patient id '{}'", history.id)));
        }
        patients.push(history);
    }
    Cohort::new(patients)
}

/// Writes a cohort as delimited text.
pub fn write_cohort<T: Real, W: Write>(cohort: &Cohort<T>, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
    header.extend(cohort.covariate_names().iter().map(String::as_str));
    wtr.write_record(&header)?;
    for p in cohort.patients() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        row.push(p.id.clone());
        row.push(p.infection_time.map(|t| t.to_string()).unwrap_or_default());
        row.push(p.exit_time.to_string());
        row.push(p.exit_state.as_str().to_string());
        row.push(if p.censored { "1" } else { "0" }.to_string());
        row.extend(p.covariates.values().map(ToString::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn ingest<T: Real>(path: impl AsRef<Path>) -> Result<Cohort<T>, DataError> {
    read_cohort(File::open(path)?)
}

pub fn export<T: Real>(cohort: &Cohort<T>, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_cohort(cohort, std::io::BufWriter::new(file))
}
