//! Cohort simulation from the extended illness-death model.
//!
//! A patient starts in state 0 at time 0. The first event time solves
//! `Λ01(0,T) + Λ02(0,T) + Λ03(0,T) = E` for a unit exponential `E`, and the cause is
//! drawn with probability proportional to the hazards at `T`. Infected patients then
//! draw a second unit exponential and solve `Λ14(T1,T2) + Λ15(T1,T2) = E'` on the
//! study time scale (Markov clock). No censoring is generated.
//!
//! Randomness comes from ChaCha8 streams: patient `i` of replicate `r` always uses
//! stream `(r << 32) | i` of the run seed, so draws never depend on cohort size,
//! thread count or scheduling.

use std::io::BufRead;

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eventstore::{Cohort, DataError, ExitState, PatientHistory};
use crate::hazards::{invert_total_cumulative, HazardError, HazardSet, HazardSpec, Transition};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown scenario id {0} (expected 1-10)")]
    UnknownScenario(i64),
    #[error("cohort size must be >= 1")]
    EmptyCohort,
    #[error("patient can never leave state {state}: all outgoing hazards are zero")]
    Absorbing { state: usize },
    #[error("params line {line}: {message}")]
    Params { line: usize, message: String },
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A parameterized data-generating scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub id: u32,
    pub label: String,
    pub hazards: HazardSet<T>,
    /// Default landmark window (roughly the mean length of stay).
    pub default_window: T,
}

const CONSTANT_WINDOW: f64 = 30.0;
const WEIBULL_WINDOW: f64 = 8.0;

/// The ten simulation scenarios: ids 1-6 constant hazards, 7-10 Weibull hazards.
pub fn scenario_registry<T: Real>(id: i64) -> Result<Scenario<T>, SimError> {
    let c = |r: f64| HazardSpec::constant(T::lit(r));
    let w = |k: f64, l: f64| HazardSpec::weibull(T::lit(k), T::lit(l));
    let constant = |rates: [f64; 5], label: &str| -> Result<Scenario<T>, SimError> {
        Ok(Scenario {
            id: id as u32,
            label: label.to_string(),
            hazards: HazardSet::new(c(rates[0])?, c(rates[1])?, c(rates[2])?, c(rates[3])?, c(rates[4])?),
            default_window: T::lit(CONSTANT_WINDOW),
        })
    };
    let weibull = |p: [(f64, f64); 5], label: &str| -> Result<Scenario<T>, SimError> {
        Ok(Scenario {
            id: id as u32,
            label: label.to_string(),
            hazards: HazardSet::new(
                w(p[0].0, p[0].1)?,
                w(p[1].0, p[1].1)?,
                w(p[2].0, p[2].1)?,
                w(p[3].0, p[3].1)?,
                w(p[4].0, p[4].1)?,
            ),
            default_window: T::lit(WEIBULL_WINDOW),
        })
    };
    match id {
        1 => constant([0.005, 0.02, 0.01, 0.02, 0.01], "no effect on mortality, low infection hazard"),
        2 => constant([0.05, 0.02, 0.01, 0.02, 0.01], "no effect on mortality, high infection hazard"),
        3 => constant([0.005, 0.02, 0.01, 0.02, 0.02], "direct effect on mortality, low infection hazard"),
        4 => constant([0.05, 0.02, 0.01, 0.02, 0.02], "direct effect on mortality, high infection hazard"),
        5 => constant([0.005, 0.03, 0.01, 0.02, 0.01], "indirect effect on mortality, low infection hazard"),
        6 => constant([0.05, 0.03, 0.01, 0.02, 0.01], "indirect effect on mortality, high infection hazard"),
        7 => weibull(
            [(1.0, 0.06), (1.4, 0.08), (0.9, 0.05), (1.4, 0.05), (0.9, 0.05)],
            "indirect effect, increasing discharge and decreasing death hazards",
        ),
        8 => weibull(
            [(1.0, 0.06), (0.9, 0.08), (1.4, 0.05), (0.9, 0.05), (1.4, 0.05)],
            "indirect effect, decreasing discharge and increasing death hazards",
        ),
        9 => weibull(
            [(1.0, 0.06), (1.4, 0.05), (0.9, 0.05), (1.4, 0.05), (0.9, 0.08)],
            "direct effect, increasing discharge and decreasing death hazards",
        ),
        10 => weibull(
            [(1.0, 0.06), (0.9, 0.05), (1.4, 0.05), (0.9, 0.05), (1.4, 0.08)],
            "direct effect, decreasing discharge and increasing death hazards",
        ),
        other => Err(SimError::UnknownScenario(other)),
    }
}

/// Parses a `key = value` scenario file.
///
/// ```text
/// # comment
/// a01 = constant 0.05
/// a02 = weibull 1.4 0.08     # shape, scale
/// window = 8                 # optional
/// label = my scenario        # optional
/// ```
///
/// All five transitions `a01 a02 a03 a14 a15` are required.
pub fn parse_params<T: Real, R: BufRead>(reader: R) -> Result<Scenario<T>, SimError> {
    let mut specs: [Option<HazardSpec<T>>; 5] = [None; 5];
    let mut window: Option<T> = None;
    let mut label = String::from("custom");
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| SimError::Params {
            line: line_no,
            message,
        };
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        let number = |s: &str| -> Result<T, SimError> {
            s.parse::<T>().map_err(|_| err(format!("cannot parse number '{s}'")))
        };
        match key {
            "window" => {
                let w = number(value)?;
                if !(w > T::zero()) {
                    return Err(err("window must be > 0".into()));
                }
                window = Some(w);
            }
            "label" => label = value.to_string(),
            _ => {
                let transition = Transition::from_key(key)
                    .ok_or_else(|| err(format!("unknown key '{key}'")))?;
                let words: Vec<&str> = value.split_whitespace().collect();
                let spec = match words.as_slice() {
                    ["constant", rate] => HazardSpec::constant(number(rate)?),
                    ["weibull", shape, scale] => HazardSpec::weibull(number(shape)?, number(scale)?),
                    _ => {
                        return Err(err(format!(
                            "expected 'constant RATE' or 'weibull SHAPE SCALE', got '{value}'"
                        )))
                    }
                }
                .map_err(|e| err(e.to_string()))?;
                let slot = Transition::ALL.iter().position(|t| *t == transition).unwrap();
                if specs[slot].is_some() {
                    return Err(err(format!("duplicate key '{key}'")));
                }
                specs[slot] = Some(spec);
            }
        }
    }
    let mut resolved = Vec::with_capacity(5);
    for (spec, transition) in specs.iter().zip(Transition::ALL) {
        resolved.push(spec.ok_or_else(|| SimError::Params {
            line: 0,
            message: format!("missing transition '{}'", transition.key()),
        })?);
    }
    let hazards = HazardSet::new(resolved[0], resolved[1], resolved[2], resolved[3], resolved[4]);
    let all_constant = hazards.constant_rates().is_some();
    Ok(Scenario {
        id: 0,
        label,
        hazards,
        default_window: window.unwrap_or(T::lit(if all_constant { CONSTANT_WINDOW } else { WEIBULL_WINDOW })),
    })
}

/// Seed and stream index of a reproducible random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Stream of patient `patient` in replicate `replicate`.
    pub fn for_patient(seed: u64, replicate: u32, patient: u32) -> Self {
        RngStream {
            seed,
            stream: (u64::from(replicate) << 32) | u64::from(patient),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn patient_index(&self) -> u32 {
        (self.stream & 0xffff_ffff) as u32
    }
}

fn unit_exponential<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u: f64 = Open01.sample(rng);
    T::lit(-u.ln())
}

fn pick_cause<T: Real, R: Rng + ?Sized>(
    specs: &[HazardSpec<T>],
    t: T,
    rng: &mut R,
) -> Result<usize, SimError> {
    let rates: Vec<T> = specs
        .iter()
        .map(|s| s.hazard_at(t))
        .collect::<Result<_, _>>()?;
    let total: T = rates.iter().copied().sum();
    let u: f64 = Open01.sample(rng);
    let target = T::lit(u) * total;
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, r) in rates.iter().enumerate() {
        if *r > T::zero() {
            last_positive = i;
        }
        acc += *r;
        if target < acc {
            return Ok(i);
        }
    }
    Ok(last_positive)
}

/// Simulates one history. The patient id is its 1-based index within the stream's replicate.
pub fn simulate_patient<T: Real>(
    hazards: &HazardSet<T>,
    stream: RngStream,
) -> Result<PatientHistory<T>, SimError> {
    let mut rng = stream.rng();
    let id = (u64::from(stream.patient_index()) + 1).to_string();

    let initial = hazards.from_initial();
    let first = invert_total_cumulative(&initial, T::zero(), unit_exponential(&mut rng))?;
    if !first.is_finite() {
        return Err(SimError::Absorbing { state: 0 });
    }
    match pick_cause(&initial, first, &mut rng)? {
        1 => return Ok(PatientHistory::new(id, None, first, ExitState::Discharge)),
        2 => return Ok(PatientHistory::new(id, None, first, ExitState::Death)),
        _ => {}
    }

    let infected = hazards.from_infected();
    let exit = invert_total_cumulative(&infected, first, unit_exponential(&mut rng))?;
    if !exit.is_finite() {
        return Err(SimError::Absorbing { state: 1 });
    }
    let state = match pick_cause(&infected, exit, &mut rng)? {
        0 => ExitState::Discharge,
        _ => ExitState::Death,
    };
    Ok(PatientHistory::new(id, Some(first), exit, state))
}

/// Simulates `n` patients of replicate 0.
pub fn simulate_cohort<T: Real>(scenario: &Scenario<T>, n: usize, seed: u64) -> Result<Cohort<T>, SimError> {
    simulate_replicate(&scenario.hazards, n, seed, 0)
}

/// Simulates `n` patients of replicate `replicate`; patient `i` consumes its own stream,
/// so the result is identical for any thread count.
pub fn simulate_replicate<T: Real>(
    hazards: &HazardSet<T>,
    n: usize,
    seed: u64,
    replicate: u32,
) -> Result<Cohort<T>, SimError> {
    if n == 0 {
        return Err(SimError::EmptyCohort);
    }
    let n32 = u32::try_from(n).map_err(|_| SimError::Params {
        line: 0,
        message: "cohort size exceeds 2^32".into(),
    })?;
    let patients = (0..n32)
        .into_par_iter()
        .map(|i| simulate_patient(hazards, RngStream::for_patient(seed, replicate, i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Cohort::new(patients)?)
}
