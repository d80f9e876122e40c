//! Time-dependent population-attributable fractions for hospital-acquired infections.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`.

pub mod ajestimator;
pub mod cohortsim;
pub mod eventstore;
pub mod glm;
pub mod hazards;
mod linalg;
pub mod paf;
pub mod real;
pub mod study;

pub use real::Real;

pub type HazardSpec = hazards::HazardSpec<f64>;
pub type HazardSet = hazards::HazardSet<f64>;
pub type PatientHistory = eventstore::PatientHistory<f64>;
pub type Cohort = eventstore::Cohort<f64>;
pub type LandmarkGrid = eventstore::LandmarkGrid<f64>;
pub type Scenario = cohortsim::Scenario<f64>;
pub type TransitionCurves = ajestimator::TransitionCurves<f64>;
pub type CensoredCif = ajestimator::CensoredCif<f64>;
pub type LogisticFit = glm::LogisticFit<f64>;
pub type DesignMatrix = glm::DesignMatrix<f64>;
pub type PafCurve = paf::PafCurve<f64>;
pub type LandmarkEstimate = paf::LandmarkEstimate<f64>;
pub type StudySummary = study::StudySummary<f64>;
