//! Acceptance suite. Each criterion prints one `criterion N: PASS|FAIL` line to the
//! terminal (uncaptured) before asserting.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::sync::OnceLock;

use common::{brute_force_suite, forward_equations};
use tdpaf::ajestimator::{aalen_johansen, constant_hazard_oracle, TransitionCurves};
use tdpaf::cohortsim::{scenario_registry, simulate_replicate, Scenario};
use tdpaf::eventstore::{fourfold_table, FourfoldTable, LandmarkGrid};
use tdpaf::paf::{
    attributable_cases, bootstrap_band, estimate_paf_c, estimate_paf_o, paf_crude, paf_lm_separate, paf_lm_supermodel,
    BootstrapTarget, LandmarkOptions, SupermodelBasis,
};
use tdpaf::study::{run_study, StudyOptions, StudySummary};

const REPS: usize = 50;
const N: usize = 10_000;
/// Stands in for t → ∞: beyond the longest stay of any simulated constant-hazard cohort.
const LARGE_T: f64 = 300.0;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {verdict} {detail}");
}

fn scenario(id: i64) -> Scenario<f64> {
    scenario_registry(id).unwrap()
}

fn rates(id: i64) -> [f64; 5] {
    scenario(id).hazards.constant_rates().unwrap()
}

/// Closed-form `PAF_c(t)` under constant hazards.
fn paf_c_oracle(id: i64, t: f64) -> f64 {
    let o = constant_hazard_oracle(rates(id), t).unwrap();
    let death = o.p[3] + o.p[5];
    (death - o.p03_0) / death
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn scenario4_study() -> &'static StudySummary<f64> {
    static STUDY: OnceLock<StudySummary<f64>> = OnceLock::new();
    STUDY.get_or_init(|| {
        let mut options = StudyOptions::new(REPS, N, 4004);
        options.landmarks = Some(LandmarkGrid::from_range(10.0, 60.0, 10.0, 30.0).unwrap());
        run_study(&scenario(4), &options).unwrap()
    })
}

#[test]
fn criterion_1_fourfold_arithmetic() {
    let table = FourfoldTable::new(2746, 8320 - 2746, 22203, 71027 - 22203);
    let paf: f64 = paf_crude(&table).unwrap();
    let cases = attributable_cases::<f64>(&table).unwrap();
    let pass = (paf - 0.005822).abs() <= 1e-6 && cases == 145;
    report(
        1,
        pass,
        &format!("paf_crude = {paf:.7} (target 0.005822 ± 1e-6), attributable cases = {cases} (target 145)"),
    );
    assert_eq!(cases, 145);
    assert!((paf - 0.005822).abs() <= 1e-6, "paf_crude = {paf}");
}

#[test]
fn criterion_2_identities() {
    // PAF_o at the end of follow-up is the crude fraction
    let mut crude_err: f64 = 0.0;
    let mut cohorts = 0;
    for id in 1..=10 {
        for r in 0..5 {
            let c = simulate_replicate(&scenario(id).hazards, 2000, 77, r).unwrap();
            let crude: f64 = paf_crude(&fourfold_table(&c).unwrap()).unwrap();
            let last = estimate_paf_o(&c).unwrap().last().unwrap();
            crude_err = crude_err.max((last - crude).abs());
            cohorts += 1;
        }
    }

    // fourfold landmark fraction equals P_E (RR - 1) / RR
    let mut lm_err: f64 = 0.0;
    let mut landmarks = 0;
    for id in 1..=10 {
        let s = scenario(id);
        let c = simulate_replicate(&s.hazards, 5000, 78, 0).unwrap();
        let grid = tdpaf::study::default_landmarks(s.default_window).unwrap();
        let a = paf_lm_separate(&c, &grid, &LandmarkOptions::default()).unwrap();
        for e in &a.estimates {
            lm_err = lm_err.max((e.paf - e.paf_from_rr()).abs());
            landmarks += 1;
        }
    }

    // saturated supermodel reproduces the separate models
    let c = simulate_replicate(&scenario(4).hazards, N, 79, 0).unwrap();
    let grid = LandmarkGrid::from_range(10.0, 60.0, 10.0, 30.0).unwrap();
    let options = LandmarkOptions::default();
    let separate = paf_lm_separate(&c, &grid, &options).unwrap();
    let saturated = paf_lm_supermodel(&c, &grid, SupermodelBasis::Saturated, &options).unwrap();
    let mut sat_err: f64 = 0.0;
    for e in &separate.estimates {
        sat_err = sat_err.max((saturated.at(e.landmark).unwrap() - e.paf).abs());
    }
    let compared = separate.estimates.len();

    let pass = crude_err <= 1e-12 && lm_err <= 1e-10 && sat_err <= 1e-6 && compared == 6;
    report(
        2,
        pass,
        &format!(
            "max |PAF_o(tau) - crude| = {crude_err:.1e} over {cohorts} cohorts (tol 1e-12); \
             max |fourfold - P_E(RR-1)/RR| = {lm_err:.1e} over {landmarks} landmarks (tol 1e-10); \
             max |saturated - separate| = {sat_err:.1e} over {compared} landmarks (tol 1e-6)"
        ),
    );
    assert!(pass);
}

/// Sup-norm distance to the closed forms on `[0, horizon]`, taken at both one-sided
/// limits of every jump.
fn sup_distance(curves: &TransitionCurves<f64>, r: [f64; 5], horizon: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut left = TransitionCurves::<f64>::initial();
    let mut compare = |est: &[f64; 6], t: f64| {
        let o = constant_hazard_oracle(r, t).unwrap();
        for j in 0..6 {
            worst = worst.max((est[j] - o.p[j]).abs());
        }
    };
    for (&t, p) in curves.times().iter().zip(curves.probabilities()) {
        if t > horizon {
            break;
        }
        compare(&left, t);
        compare(p, t);
        left = *p;
    }
    compare(&curves.at(horizon), horizon);
    worst
}

#[test]
fn criterion_3_oracle_equivalence() {
    let r = rates(4);
    let hazards = scenario(4).hazards;
    let distances: Vec<f64> = (0..REPS as u32)
        .map(|rep| {
            let c = simulate_replicate(&hazards, N, 3003, rep).unwrap();
            sup_distance(&aalen_johansen(&c).unwrap(), r, 120.0)
        })
        .collect();
    let within = distances.iter().filter(|&&d| d <= 0.015).count();
    let worst = distances.iter().copied().fold(0.0, f64::max);

    let mut ode_err: f64 = 0.0;
    for id in 1..=6 {
        let s = scenario(id);
        for t in [0.5, 1.0, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0] {
            let (p, p03_0) = forward_equations(&s.hazards, t, 0.01);
            let o = constant_hazard_oracle(rates(id), t).unwrap();
            for j in 0..6 {
                ode_err = ode_err.max((p[j] - o.p[j]).abs());
            }
            ode_err = ode_err.max((p03_0 - o.p03_0).abs());
        }
    }

    let pass = within * 10 >= REPS * 9 && ode_err <= 1e-6;
    report(
        3,
        pass,
        &format!(
            "Aalen-Johansen sup-norm <= 0.015 on [0,120] in {within}/{REPS} reps (need >= 90%, worst {worst:.4}); \
             closed form vs ODE max error {ode_err:.1e} on scenarios 1-6 (tol 1e-6)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_estimand_convergence() {
    let limit3 = paf_c_oracle(3, LARGE_T);
    let hazards = scenario(3).hazards;
    let values: Vec<f64> = (0..REPS as u32)
        .map(|rep| {
            let c = simulate_replicate(&hazards, N, 4003, rep).unwrap();
            estimate_paf_c(&c, &[], &Default::default()).unwrap().at(LARGE_T).unwrap()
        })
        .collect();
    let mean3 = mean(&values);
    let ok3 = (mean3 - 0.0667).abs() <= 0.01;

    let study1 = run_study(&scenario(1), &StudyOptions::new(REPS, N, 4001)).unwrap();
    let mut worst1: f64 = 0.0;
    let mut points = 0;
    for row in study1.rows_for("paf_c", None) {
        if row.defined == REPS && row.time.unwrap() >= 1.0 {
            worst1 = worst1.max(row.mean.unwrap().abs());
            points += 1;
        }
    }
    let ok1 = worst1 <= 0.02 && points > 0;

    let lm = scenario4_study()
        .rows_for("paf_lm", Some("separate"))
        .into_iter()
        .find(|r| r.time == Some(20.0))
        .unwrap();
    let mean4 = lm.mean.unwrap();
    let ok4 = (mean4 - 0.159).abs() <= 0.03;

    report(
        4,
        ok3 && ok1 && ok4,
        &format!(
            "scenario 3 mean PAF_c({LARGE_T}) = {mean3:.4} (target 0.0667 ± 0.01, closed form {limit3:.4}); \
             scenario 1 max |mean PAF_c| = {worst1:.4} over {points} time points (tol 0.02); \
             scenario 4 mean PAF_LM(20,30) = {mean4:.4} (target 0.159 ± 0.03, defined in {}/{REPS})",
            lm.defined
        ),
    );
    assert!(ok3 && ok1 && ok4);
}

#[test]
fn criterion_5_qualitative_shapes() {
    let s4 = scenario4_study();
    let crude4 = s4.rows_for("crude", None)[0].mean.unwrap();
    let paf_o = s4.rows_for("paf_o", None);
    let early_min = paf_o
        .iter()
        .filter(|r| r.time.unwrap() <= 30.0)
        .filter_map(|r| r.mean)
        .fold(f64::INFINITY, f64::min);
    let end = paf_o.last().unwrap().mean.unwrap();
    let ok4 = early_min < 0.0 && (end - crude4).abs() <= 0.005;

    let study7 = run_study(&scenario(7), &StudyOptions::new(REPS, N, 5007)).unwrap();
    let crude7 = study7.rows_for("crude", None)[0].mean.unwrap();
    let paf_c7 = study7.rows_for("paf_c", None).last().unwrap().mean.unwrap();
    let late_min = |model: &str| {
        let rows = study7.rows_for("paf_lm", Some(model));
        let half = rows.len() / 2;
        rows[half..]
            .iter()
            .map(|r| r.mean.unwrap_or(f64::NEG_INFINITY))
            .fold(f64::INFINITY, f64::min)
    };
    let sep7 = late_min("separate");
    let sup7 = late_min("supermodel");
    let ok7 = crude7.abs() <= 0.02 && paf_c7 > 0.03 && sep7 > 0.03 && sup7 > 0.03;

    report(
        5,
        ok4 && ok7,
        &format!(
            "scenario 4 mean PAF_o: min over t <= 30 = {early_min:.4} (< 0), end {end:.4} vs mean crude {crude4:.4}; \
             scenario 7 mean crude = {crude7:.4} (|.| <= 0.02), mean PAF_c at end = {paf_c7:.4} (> 0.03), \
             smallest late-landmark mean separate = {sep7:.4}, supermodel = {sup7:.4} (> 0.03)"
        ),
    );
    assert!(ok4 && ok7);
}

#[test]
fn criterion_6_bootstrap_coverage() {
    let truth = paf_c_oracle(3, LARGE_T);
    let hazards = scenario(3).hazards;
    let target = BootstrapTarget::PafC {
        covariates: Vec::new(),
        ipw: Default::default(),
    };
    let mut covered = 0;
    for rep in 0..REPS as u32 {
        let c = simulate_replicate(&hazards, N, 6003, rep).unwrap();
        let band = bootstrap_band(&target, &c, &[LARGE_T], 200, 0.95, 60_000 + u64::from(rep)).unwrap();
        let (lo, hi) = (band.lower[0].unwrap(), band.upper[0].unwrap());
        if lo <= truth && truth <= hi {
            covered += 1;
        }
    }
    let pass = covered * 100 >= REPS * 88;
    report(
        6,
        pass,
        &format!("PAF_c({LARGE_T}) band covers closed form {truth:.4} in {covered}/{REPS} reps (need >= 88%)"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_brute_force() {
    let r = brute_force_suite(1e-12);
    let pass = r.mismatches.is_empty();
    report(
        7,
        pass,
        &format!(
            "{} cohorts of <= 5 patients, {} comparisons, max error {:.1e} (tol 1e-12)",
            r.cohorts, r.comparisons, r.max_error
        ),
    );
    assert!(pass, "{:#?}", r.mismatches);
}
