//! Cause-specific hazard functions of the extended illness-death model.
//!
//! Two families are supported: constant rates and Weibull hazards
//! `k·λ·(λt)^(k−1)`. Cumulative hazards have closed forms; the total cumulative
//! hazard of several competing transitions is inverted numerically for sampling.

use std::fmt;

use thiserror::Error;

use crate::real::Real;

/// Absolute tolerance on the returned time of [`invert_total_cumulative`].
pub const INVERSION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HazardError {
    #[error("invalid hazard parameter: {0}")]
    InvalidParameter(String),
    #[error("hazard evaluated outside its domain at t = {0}")]
    Domain(f64),
    #[error("invalid interval: s = {s} > t = {t}")]
    Interval { s: f64, t: f64 },
    #[error("no hazards supplied")]
    Empty,
}

/// A single cause-specific hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HazardSpec<T> {
    Constant { rate: T },
    Weibull { shape: T, scale: T },
}

impl<T: Real> HazardSpec<T> {
    pub fn constant(rate: T) -> Result<Self, HazardError> {
        if !(rate >= T::zero()) || !rate.is_finite() {
            return Err(HazardError::InvalidParameter(format!(
                "constant rate must be finite and >= 0, got {rate}"
            )));
        }
        Ok(HazardSpec::Constant { rate })
    }

    pub fn weibull(shape: T, scale: T) -> Result<Self, HazardError> {
        if !(shape > T::zero()) || !shape.is_finite() {
            return Err(HazardError::InvalidParameter(format!(
                "weibull shape must be finite and > 0, got {shape}"
            )));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(HazardError::InvalidParameter(format!(
                "weibull scale must be finite and > 0, got {scale}"
            )));
        }
        Ok(HazardSpec::Weibull { shape, scale })
    }

    /// The constant rate this hazard reduces to, if any (a Weibull with shape 1 does).
    pub fn as_constant(&self) -> Option<T> {
        match *self {
            HazardSpec::Constant { rate } => Some(rate),
            HazardSpec::Weibull { shape, scale } if shape == T::one() => Some(scale),
            HazardSpec::Weibull { .. } => None,
        }
    }

    /// Hazard rate at time `t`.
    pub fn hazard_at(&self, t: T) -> Result<T, HazardError> {
        if t.is_nan() {
            return Err(HazardError::Domain(f64::NAN));
        }
        if let Some(rate) = self.as_constant() {
            if matches!(self, HazardSpec::Weibull { .. }) && t <= T::zero() {
                return Err(HazardError::Domain(t.to_f64_lossy()));
            }
            return Ok(rate);
        }
        match *self {
            HazardSpec::Weibull { shape, scale } => {
                if t <= T::zero() {
                    return Err(HazardError::Domain(t.to_f64_lossy()));
                }
                Ok(shape * scale * (scale * t).powf(shape - T::one()))
            }
            HazardSpec::Constant { .. } => unreachable!(),
        }
    }

    /// Cumulative hazard over `[s, t]`.
    pub fn cumulative_hazard(&self, s: T, t: T) -> Result<T, HazardError> {
        if s.is_nan() || t.is_nan() || s < T::zero() {
            return Err(HazardError::Domain(s.to_f64_lossy()));
        }
        if s > t {
            return Err(HazardError::Interval {
                s: s.to_f64_lossy(),
                t: t.to_f64_lossy(),
            });
        }
        Ok(self.cumulative_unchecked(s, t))
    }

    fn cumulative_unchecked(&self, s: T, t: T) -> T {
        if let Some(rate) = self.as_constant() {
            return rate * (t - s);
        }
        match *self {
            HazardSpec::Weibull { shape, scale } => {
                let upper = (scale * t).powf(shape);
                let lower = if s == T::zero() {
                    T::zero()
                } else {
                    (scale * s).powf(shape)
                };
                upper - lower
            }
            HazardSpec::Constant { .. } => unreachable!(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.as_constant(), Some(r) if r == T::zero())
    }
}

impl<T: Real> fmt::Display for HazardSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HazardSpec::Constant { rate } => write!(f, "constant rate={rate}"),
            HazardSpec::Weibull { shape, scale } => {
                write!(f, "weibull shape={shape} scale={scale}")
            }
        }
    }
}

/// Free-function form of [`HazardSpec::hazard_at`].
pub fn hazard_at<T: Real>(spec: &HazardSpec<T>, t: T) -> Result<T, HazardError> {
    spec.hazard_at(t)
}

/// Free-function form of [`HazardSpec::cumulative_hazard`].
pub fn cumulative_hazard<T: Real>(spec: &HazardSpec<T>, s: T, t: T) -> Result<T, HazardError> {
    spec.cumulative_hazard(s, t)
}

/// Sum of cumulative hazards over `[s, t]`.
pub fn total_cumulative<T: Real>(specs: &[HazardSpec<T>], s: T, t: T) -> Result<T, HazardError> {
    let mut acc = T::zero();
    for spec in specs {
        acc += spec.cumulative_hazard(s, t)?;
    }
    Ok(acc)
}

/// Smallest `t >= s` with `Σ Λ_j(s, t) = u`.
///
/// All-constant inputs are inverted in closed form; anything else is bisected to an
/// absolute tolerance of [`INVERSION_TOLERANCE`]. Returns `+∞` when every rate is zero.
pub fn invert_total_cumulative<T: Real>(
    specs: &[HazardSpec<T>],
    s: T,
    u: T,
) -> Result<T, HazardError> {
    if specs.is_empty() {
        return Err(HazardError::Empty);
    }
    if !(u > T::zero()) {
        return Err(HazardError::InvalidParameter(format!(
            "cumulative target must be > 0, got {u}"
        )));
    }
    if !(s >= T::zero()) || !s.is_finite() {
        return Err(HazardError::Domain(s.to_f64_lossy()));
    }
    if specs.iter().all(HazardSpec::is_zero) {
        return Ok(T::infinity());
    }

    let constants: Option<Vec<T>> = specs.iter().map(HazardSpec::as_constant).collect();
    let t = match constants {
        Some(rates) => {
            let total: T = rates.into_iter().sum();
            s + u / total
        }
        None => bisect_total(specs, s, u),
    };
    // Keep the returned time strictly after `s`, even for vanishing `u`.
    if t <= s {
        Ok(s + s.abs().max(T::one()) * T::epsilon())
    } else {
        Ok(t)
    }
}

fn bisect_total<T: Real>(specs: &[HazardSpec<T>], s: T, u: T) -> T {
    let total = |t: T| -> T {
        specs
            .iter()
            .map(|spec| spec.cumulative_unchecked(s, t))
            .sum()
    };
    let tol = T::lit(INVERSION_TOLERANCE);
    let mut lo = s;
    let mut width = T::one();
    let mut hi = s + width;
    while total(hi) < u {
        lo = hi;
        width = width + width;
        hi = s + width;
        if !hi.is_finite() {
            return T::infinity();
        }
    }
    while hi - lo > tol {
        let mid = lo + (hi - lo) / (T::one() + T::one());
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// The five transitions of the extended illness-death model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transition {
    /// Infection (0 → 1).
    Infection,
    /// Discharge without infection (0 → 2).
    DischargeUninfected,
    /// Death without infection (0 → 3).
    DeathUninfected,
    /// Discharge after infection (1 → 4).
    DischargeInfected,
    /// Death after infection (1 → 5).
    DeathInfected,
}

impl Transition {
    pub const ALL: [Transition; 5] = [
        Transition::Infection,
        Transition::DischargeUninfected,
        Transition::DeathUninfected,
        Transition::DischargeInfected,
        Transition::DeathInfected,
    ];

    /// Short key such as `a01`.
    pub fn key(self) -> &'static str {
        match self {
            Transition::Infection => "a01",
            Transition::DischargeUninfected => "a02",
            Transition::DeathUninfected => "a03",
            Transition::DischargeInfected => "a14",
            Transition::DeathInfected => "a15",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Transition::ALL.into_iter().find(|t| t.key() == key)
    }

    /// `(from, to)` states.
    pub fn states(self) -> (usize, usize) {
        match self {
            Transition::Infection => (0, 1),
            Transition::DischargeUninfected => (0, 2),
            Transition::DeathUninfected => (0, 3),
            Transition::DischargeInfected => (1, 4),
            Transition::DeathInfected => (1, 5),
        }
    }
}

/// Hazards for all five transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardSet<T> {
    pub a01: HazardSpec<T>,
    pub a02: HazardSpec<T>,
    pub a03: HazardSpec<T>,
    pub a14: HazardSpec<T>,
    pub a15: HazardSpec<T>,
}

impl<T: Real> HazardSet<T> {
    pub fn new(
        a01: HazardSpec<T>,
        a02: HazardSpec<T>,
        a03: HazardSpec<T>,
        a14: HazardSpec<T>,
        a15: HazardSpec<T>,
    ) -> Self {
        HazardSet {
            a01,
            a02,
            a03,
            a14,
            a15,
        }
    }

    /// All-constant set from rates in the order `a01, a02, a03, a14, a15`.
    pub fn constant(rates: [T; 5]) -> Result<Self, HazardError> {
        Ok(HazardSet {
            a01: HazardSpec::constant(rates[0])?,
            a02: HazardSpec::constant(rates[1])?,
            a03: HazardSpec::constant(rates[2])?,
            a14: HazardSpec::constant(rates[3])?,
            a15: HazardSpec::constant(rates[4])?,
        })
    }

    pub fn get(&self, transition: Transition) -> &HazardSpec<T> {
        match transition {
            Transition::Infection => &self.a01,
            Transition::DischargeUninfected => &self.a02,
            Transition::DeathUninfected => &self.a03,
            Transition::DischargeInfected => &self.a14,
            Transition::DeathInfected => &self.a15,
        }
    }

    pub fn get_mut(&mut self, transition: Transition) -> &mut HazardSpec<T> {
        match transition {
            Transition::Infection => &mut self.a01,
            Transition::DischargeUninfected => &mut self.a02,
            Transition::DeathUninfected => &mut self.a03,
            Transition::DischargeInfected => &mut self.a14,
            Transition::DeathInfected => &mut self.a15,
        }
    }

    /// Hazards out of the initial state, ordered `a01, a02, a03`.
    pub fn from_initial(&self) -> [HazardSpec<T>; 3] {
        [self.a01, self.a02, self.a03]
    }

    /// Hazards out of the infected state, ordered `a14, a15`.
    pub fn from_infected(&self) -> [HazardSpec<T>; 2] {
        [self.a14, self.a15]
    }

    /// Constant rates in canonical order, if every hazard is constant.
    pub fn constant_rates(&self) -> Option<[T; 5]> {
        Some([
            self.a01.as_constant()?,
            self.a02.as_constant()?,
            self.a03.as_constant()?,
            self.a14.as_constant()?,
            self.a15.as_constant()?,
        ])
    }
}
