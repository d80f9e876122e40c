//! Aalen-Johansen estimation for the extended illness-death model and the
//! censor-at-exposure cumulative incidence, plus closed-form occupation
//! probabilities for constant hazards.
//!
//! States: 0 admitted, 1 infected, 2 discharged uninfected, 3 dead uninfected,
//! 4 discharged infected, 5 dead infected.
//!
//! Tie conventions: events sharing a time enter one product-integral factor;
//! censorings at an event time leave the risk set after that factor. A patient
//! infected at the same time they exit moves 0 → 1 in the first factor and exits
//! state 1 in a second factor at the same time.

use std::io::Write;

use thiserror::Error;

use crate::eventstore::{Cohort, ExitState};
use crate::real::Real;

pub const N_STATES: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Right-continuous step functions `P0j(0, t)`, `j = 0..=5`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCurves<T> {
    times: Vec<T>,
    probs: Vec<[T; N_STATES]>,
    n: usize,
}

impl<T: Real> TransitionCurves<T> {
    pub fn initial() -> [T; N_STATES] {
        let mut p = [T::zero(); N_STATES];
        p[0] = T::one();
        p
    }

    /// Jump times, ascending.
    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// Occupation probabilities after each jump.
    pub fn probabilities(&self) -> &[[T; N_STATES]] {
        &self.probs
    }

    /// Number of patients the curves were estimated from.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Occupation probabilities at `t` (last value carried forward).
    pub fn at(&self, t: T) -> [T; N_STATES] {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            Self::initial()
        } else {
            self.probs[idx - 1]
        }
    }

    /// Values of `P0j` at the jump times.
    pub fn curve(&self, state: usize) -> Vec<T> {
        self.probs.iter().map(|p| p[state]).collect()
    }

    /// Scales the time axis; probabilities are unchanged.
    pub fn rescale_time(&self, factor: T) -> Self {
        TransitionCurves {
            times: self.times.iter().map(|&t| t * factor).collect(),
            probs: self.probs.clone(),
            n: self.n,
        }
    }
}

/// Cumulative incidences of the competing-risks model in which infection censors.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredCif<T> {
    times: Vec<T>,
    p02: Vec<T>,
    p03: Vec<T>,
    n: usize,
}

impl<T: Real> CensoredCif<T> {
    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// Death without infection in the infection-free world, at the jump times.
    pub fn p03_0(&self) -> &[T] {
        &self.p03
    }

    /// Discharge in the infection-free world, at the jump times.
    pub fn p02_0(&self) -> &[T] {
        &self.p02
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p03_0_at(&self, t: T) -> T {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            T::zero()
        } else {
            self.p03[idx - 1]
        }
    }

    pub fn p02_0_at(&self, t: T) -> T {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            T::zero()
        } else {
            self.p02[idx - 1]
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Record<T> {
    time: T,
    /// 0: regular factor; 1: exit of a patient infected at this same time.
    phase: u8,
    from: u8,
    /// `None` for censoring.
    to: Option<u8>,
}

/// Aalen-Johansen estimator of `P0j(0, t)` for all six states.
pub fn aalen_johansen<T: Real>(cohort: &Cohort<T>) -> Result<TransitionCurves<T>, EstimatorError> {
    if cohort.is_empty() {
        return Err(EstimatorError::EmptyCohort);
    }
    let mut records = Vec::with_capacity(cohort.len() * 2);
    for p in cohort.patients() {
        let from = if let Some(inf) = p.infection_time {
            records.push(Record {
                time: inf,
                phase: 0,
                from: 0,
                to: Some(1),
            });
            1
        } else {
            0
        };
        let tie = matches!(p.infection_time, Some(inf) if inf == p.exit_time);
        let to = if p.censored {
            None
        } else {
            Some(match (from, p.exit_state) {
                (0, ExitState::Discharge) => 2,
                (0, ExitState::Death) => 3,
                (_, ExitState::Discharge) => 4,
                (_, ExitState::Death) => 5,
            })
        };
        records.push(Record {
            time: p.exit_time,
            phase: u8::from(tie),
            from,
            to,
        });
    }
    records.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .expect("validated times are finite")
            .then(a.phase.cmp(&b.phase))
    });

    let mut at_risk = [cohort.len(), 0usize];
    let mut p = TransitionCurves::initial();
    let mut times = Vec::new();
    let mut probs = Vec::new();

    let mut i = 0;
    while i < records.len() {
        let t = records[i].time;
        let mut any_event = false;
        while i < records.len() && records[i].time == t {
            let phase = records[i].phase;
            // counts[from][to]; censored[from]
            let mut counts = [[0usize; N_STATES]; 2];
            let mut censored = [0usize; 2];
            while i < records.len() && records[i].time == t && records[i].phase == phase {
                let r = records[i];
                match r.to {
                    Some(to) => counts[r.from as usize][to as usize] += 1,
                    None => censored[r.from as usize] += 1,
                }
                i += 1;
            }
            let events0: usize = counts[0].iter().sum();
            let events1: usize = counts[1].iter().sum();
            if events0 + events1 > 0 {
                any_event = true;
                let old = p;
                if events0 > 0 {
                    let n0 = T::count(at_risk[0]);
                    let mut left = T::zero();
                    for to in 1..=3 {
                        let h = T::count(counts[0][to]) / n0;
                        p[to] += old[0] * h;
                        left += h;
                    }
                    p[0] = old[0] - old[0] * left;
                }
                if events1 > 0 {
                    let n1 = T::count(at_risk[1]);
                    let mut left = T::zero();
                    for to in 4..=5 {
                        let h = T::count(counts[1][to]) / n1;
                        p[to] += old[1] * h;
                        left += h;
                    }
                    p[1] -= old[1] * left;
                }
            }
            at_risk[0] -= events0 + censored[0];
            at_risk[1] = at_risk[1] + counts[0][1] - events1 - censored[1];
        }
        if any_event {
            times.push(t);
            probs.push(p);
        }
    }

    Ok(TransitionCurves {
        times,
        probs,
        n: cohort.len(),
    })
}

/// Weights that are constant between consecutive breakpoints.
pub trait PiecewiseWeights<T> {
    /// Index of the piece containing time `t`.
    fn segment(&self, t: T) -> usize;
    /// Weight of patient `patient` (cohort order) within piece `segment`.
    fn weight(&self, patient: usize, segment: usize) -> T;
}

/// All weights equal to one.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeights;

impl<T: Real> PiecewiseWeights<T> for UnitWeights {
    fn segment(&self, _t: T) -> usize {
        0
    }

    fn weight(&self, _patient: usize, _segment: usize) -> T {
        T::one()
    }
}

/// Cumulative incidence of death without infection when infection censors, i.e. the
/// death probability in a world where nobody becomes infected.
pub fn cif_censor_at_exposure<T: Real>(cohort: &Cohort<T>) -> Result<CensoredCif<T>, EstimatorError> {
    cif_censor_at_exposure_weighted(cohort, &UnitWeights)
}

/// Weighted version of [`cif_censor_at_exposure`]: risk sets and event counts are
/// sums of the patients' current weights.
pub fn cif_censor_at_exposure_weighted<T: Real, W: PiecewiseWeights<T> + ?Sized>(
    cohort: &Cohort<T>,
    weights: &W,
) -> Result<CensoredCif<T>, EstimatorError> {
    if cohort.is_empty() {
        return Err(EstimatorError::EmptyCohort);
    }
    // (time out of state 0, outcome): 2 discharge, 3 death, 0 censored
    let patients = cohort.patients();
    let mut order: Vec<(T, u8, usize)> = patients
        .iter()
        .enumerate()
        .map(|(idx, p)| match p.infection_time {
            Some(inf) => (inf, 0, idx),
            None if p.censored => (p.exit_time, 0, idx),
            None => (
                p.exit_time,
                if p.exit_state == ExitState::Death { 3 } else { 2 },
                idx,
            ),
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("validated times are finite"));

    let mut times = Vec::new();
    let mut p02 = Vec::new();
    let mut p03 = Vec::new();
    let mut surv = T::one();
    let mut f2 = T::zero();
    let mut f3 = T::zero();

    let mut start = 0;
    let mut segment = usize::MAX;
    let mut risk = T::zero();
    while start < order.len() {
        let t = order[start].0;
        let seg = weights.segment(t);
        if seg != segment {
            segment = seg;
            risk = order[start..].iter().map(|&(_, _, idx)| weights.weight(idx, seg)).sum();
        }
        let mut end = start;
        let mut d2 = T::zero();
        let mut d3 = T::zero();
        let mut leaving = T::zero();
        while end < order.len() && order[end].0 == t {
            let (_, outcome, idx) = order[end];
            let w = weights.weight(idx, seg);
            match outcome {
                2 => d2 += w,
                3 => d3 += w,
                _ => {}
            }
            leaving += w;
            end += 1;
        }
        if (d2 > T::zero() || d3 > T::zero()) && risk > T::zero() {
            let h2 = d2 / risk;
            let h3 = d3 / risk;
            f2 += surv * h2;
            f3 += surv * h3;
            surv = surv - surv * (h2 + h3);
            times.push(t);
            p02.push(f2);
            p03.push(f3);
        }
        risk -= leaving;
        start = end;
    }

    Ok(CensoredCif {
        times,
        p02,
        p03,
        n: cohort.len(),
    })
}

/// Exact occupation probabilities under constant hazards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleProbabilities<T> {
    pub p: [T; N_STATES],
    /// Death without infection when the infection hazard is removed.
    pub p03_0: T,
}

/// Closed-form transition probabilities from state 0 for constant rates
/// `[a01, a02, a03, a14, a15]`.
pub fn constant_hazard_oracle<T: Real>(rates: [T; 5], t: T) -> Result<OracleProbabilities<T>, EstimatorError> {
    if rates.iter().any(|r| !(*r >= T::zero()) || !r.is_finite()) {
        return Err(EstimatorError::Argument("rates must be finite and >= 0".into()));
    }
    if !(t >= T::zero()) {
        return Err(EstimatorError::Argument(format!("time must be >= 0, got {t}")));
    }
    let [a01, a02, a03, a14, a15] = rates;
    let c1 = a01 + a02 + a03;
    let c2 = a14 + a15;

    let mut p = [T::zero(); N_STATES];
    p[0] = (-c1 * t).exp();
    // 1 - exp(-c t) / c, with the c → 0 limit t
    let absorbed_over_rate = |c: T| if c > T::zero() { -(-c * t).exp_m1() / c } else { t };
    let leave0 = absorbed_over_rate(c1);
    p[2] = a02 * leave0;
    p[3] = a03 * leave0;
    let entered1 = a01 * leave0;
    p[1] = if c1 == c2 {
        a01 * t * (-c1 * t).exp()
    } else {
        // a01 (e^{-c2 t} - e^{-c1 t}) / (c1 - c2)
        a01 * (-c2 * t).exp() * (-(-(c1 - c2) * t).exp_m1()) / (c1 - c2)
    };
    if c2 > T::zero() {
        let left1 = (entered1 - p[1]).max(T::zero());
        p[4] = a14 / c2 * left1;
        p[5] = a15 / c2 * left1;
    }
    let p03_0 = a03 * absorbed_over_rate(a02 + a03);
    Ok(OracleProbabilities { p, p03_0 })
}

/// Writes curves in long format `curve,time,value`.
pub fn write_curves<T: Real, W: Write>(
    curves: &TransitionCurves<T>,
    cif: Option<&CensoredCif<T>>,
    writer: W,
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["curve", "time", "value"])?;
    for state in 0..N_STATES {
        let name = format!("P0{state}");
        for (t, p) in curves.times().iter().zip(curves.probabilities()) {
            wtr.write_record([name.as_str(), &t.to_string(), &p[state].to_string()])?;
        }
    }
    if let Some(cif) = cif {
        for (t, v) in cif.times().iter().zip(cif.p03_0()) {
            wtr.write_record(["P03_0", &t.to_string(), &v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventstore::PatientHistory;

    fn cohort(p: Vec<PatientHistory<f64>>) -> Cohort<f64> {
        Cohort::new(p).unwrap()
    }

    #[test]
    fn single_uninfected_death() {
        let c = cohort(vec![PatientHistory::new("a", None, 3.0, ExitState::Death)]);
        let aj = aalen_johansen(&c).unwrap();
        assert_eq!(aj.times(), &[3.0]);
        assert_eq!(aj.at(2.999)[3], 0.0);
        assert_eq!(aj.at(3.0), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(aj.at(100.0)[3], 1.0);
    }

    #[test]
    fn two_patient_hand_product_integral() {
        let c = cohort(vec![
            PatientHistory::new("a", Some(2.0), 5.0, ExitState::Death),
            PatientHistory::new("b", None, 4.0, ExitState::Discharge),
        ]);
        let aj = aalen_johansen(&c).unwrap();
        assert_eq!(aj.at(1.9), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(aj.at(2.0)[1], 0.5);
        assert_eq!(aj.at(4.9)[1], 0.5);
        assert_eq!(aj.at(4.0)[2], 0.5);
        assert_eq!(aj.at(5.0)[1], 0.0);
        assert_eq!(aj.at(5.0)[5], 0.5);
        assert_eq!(aj.at(50.0)[2], 0.5);
    }

    #[test]
    fn censoring_leaves_after_events() {
        // Death and censoring at t=2 among three patients: hazard 1/3.
        let c = cohort(vec![
            PatientHistory::new("a", None, 2.0, ExitState::Death),
            PatientHistory::censored_at("b", None, 2.0),
            PatientHistory::new("c", None, 4.0, ExitState::Death),
        ]);
        let aj = aalen_johansen(&c).unwrap();
        assert!((aj.at(2.0)[3] - 1.0 / 3.0).abs() < 1e-15);
        assert!((aj.at(4.0)[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn infection_at_exit_counts_as_exposed() {
        let c = cohort(vec![
            PatientHistory::new("a", Some(4.0), 4.0, ExitState::Death),
            PatientHistory::new("b", None, 6.0, ExitState::Discharge),
        ]);
        let aj = aalen_johansen(&c).unwrap();
        assert_eq!(aj.at(4.0), [0.5, 0.0, 0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn empty_cohort_errors() {
        let c = Cohort::<f64>::new(vec![]).unwrap();
        assert_eq!(aalen_johansen(&c).unwrap_err(), EstimatorError::EmptyCohort);
        assert_eq!(cif_censor_at_exposure(&c).unwrap_err(), EstimatorError::EmptyCohort);
    }

    #[test]
    fn cif_censors_infected() {
        let c = cohort(vec![PatientHistory::new("a", Some(2.0), 9.0, ExitState::Death)]);
        let cif = cif_censor_at_exposure(&c).unwrap();
        assert!(cif.times().is_empty());
        assert_eq!(cif.p03_0_at(100.0), 0.0);
    }

    #[test]
    fn cif_equals_p03_without_infections() {
        let c = cohort(vec![
            PatientHistory::new("a", None, 1.0, ExitState::Death),
            PatientHistory::new("b", None, 2.0, ExitState::Discharge),
            PatientHistory::censored_at("c", None, 2.5),
            PatientHistory::new("d", None, 3.0, ExitState::Death),
            PatientHistory::new("e", None, 3.0, ExitState::Death),
            PatientHistory::new("f", None, 7.0, ExitState::Discharge),
        ]);
        let aj = aalen_johansen(&c).unwrap();
        let cif = cif_censor_at_exposure(&c).unwrap();
        assert_eq!(aj.times(), cif.times());
        for (p, f) in aj.probabilities().iter().zip(cif.p03_0()) {
            assert_eq!(p[3], *f);
        }
    }

    #[test]
    fn oracle_examples() {
        let s4: [f64; 5] = [0.05, 0.02, 0.01, 0.02, 0.02];
        let o = constant_hazard_oracle(s4, 10.0).unwrap();
        assert!((o.p[0] - 0.449_329).abs() < 1e-6);
        let o = constant_hazard_oracle(s4, 2000.0).unwrap();
        assert!((o.p[3] - 0.125).abs() < 1e-12);
        assert!((o.p[5] - 0.3125).abs() < 1e-12);
        assert!((o.p03_0 - 1.0 / 3.0).abs() < 1e-12);
        let z = constant_hazard_oracle([0.0; 5], 17.0).unwrap();
        assert_eq!(z.p, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(z.p03_0, 0.0);
        assert!(constant_hazard_oracle([-0.1, 0.0, 0.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn oracle_equal_exit_rates_limit() {
        // c1 = c2 = 0.04
        let rates: [f64; 5] = [0.01, 0.02, 0.01, 0.03, 0.01];
        let t: f64 = 13.0;
        let o = constant_hazard_oracle(rates, t).unwrap();
        assert!((o.p[1] - 0.01 * t * (-0.04 * t).exp()).abs() < 1e-15);
        let near = constant_hazard_oracle([0.01, 0.02, 0.01, 0.03, 0.010_000_001], t).unwrap();
        for j in 0..N_STATES {
            assert!((o.p[j] - near.p[j]).abs() < 1e-7);
        }
        let sum: f64 = o.p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
    }

    #[test]
    fn curves_export_long_format() {
        let c = cohort(vec![PatientHistory::new("a", None, 3.0, ExitState::Death)]);
        let aj = aalen_johansen(&c).unwrap();
        let cif = cif_censor_at_exposure(&c).unwrap();
        let mut buf = Vec::new();
        write_curves(&aj, Some(&cif), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("curve,time,value\nP00,3,0\n"));
        assert!(text.contains("P03,3,1\n"));
        assert!(text.ends_with("P03_0,3,1\n"));
    }
}
