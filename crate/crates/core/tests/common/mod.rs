//! Independent oracles for the integration tests.
#![allow(dead_code)]

use tdpaf::eventstore::{Cohort, ExitState, PatientHistory};
use tdpaf::hazards::HazardSet;

/// Occupation probabilities and the infection-free death incidence at `t`, from RK4
/// integration of the forward equations with step at most `max_step`.
pub fn forward_equations(hazards: &HazardSet<f64>, t: f64, max_step: f64) -> ([f64; 6], f64) {
    // state: P0..P5, then S and F of the infection-censored model
    let rate = |spec: &tdpaf::hazards::HazardSpec<f64>, s: f64| -> f64 {
        match spec.as_constant() {
            Some(r) => r,
            None => spec.hazard_at(s.max(1e-12)).unwrap(),
        }
    };
    let deriv = |s: f64, y: &[f64; 8]| -> [f64; 8] {
        let a01 = rate(&hazards.a01, s);
        let a02 = rate(&hazards.a02, s);
        let a03 = rate(&hazards.a03, s);
        let a14 = rate(&hazards.a14, s);
        let a15 = rate(&hazards.a15, s);
        [
            -(a01 + a02 + a03) * y[0],
            a01 * y[0] - (a14 + a15) * y[1],
            a02 * y[0],
            a03 * y[0],
            a14 * y[1],
            a15 * y[1],
            -(a02 + a03) * y[6],
            a03 * y[6],
        ]
    };
    let mut y = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    if t <= 0.0 {
        return ([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
    }
    let steps = (t / max_step).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let add = |y: &[f64; 8], k: &[f64; 8], f: f64| -> [f64; 8] {
        let mut o = *y;
        for i in 0..8 {
            o[i] += f * k[i];
        }
        o
    };
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = deriv(s, &y);
        let k2 = deriv(s + h / 2.0, &add(&y, &k1, h / 2.0));
        let k3 = deriv(s + h / 2.0, &add(&y, &k2, h / 2.0));
        let k4 = deriv(s + h, &add(&y, &k3, h));
        for j in 0..8 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    ([y[0], y[1], y[2], y[3], y[4], y[5]], y[7])
}

fn mat_mul(a: &[[f64; 6]; 6], b: &[[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut c = [[0.0; 6]; 6];
    for i in 0..6 {
        for k in 0..6 {
            for j in 0..6 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn identity() -> [[f64; 6]; 6] {
    let mut m = [[0.0; 6]; 6];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn exit_target(p: &PatientHistory<f64>) -> Option<usize> {
    if p.censored {
        return None;
    }
    Some(match (p.infection_time.is_some(), p.exit_state) {
        (false, ExitState::Discharge) => 2,
        (false, ExitState::Death) => 3,
        (true, ExitState::Discharge) => 4,
        (true, ExitState::Death) => 5,
    })
}

fn distinct_times(cohort: &Cohort<f64>) -> Vec<f64> {
    let mut t: Vec<f64> = cohort
        .patients()
        .iter()
        .flat_map(|p| p.infection_time.into_iter().chain(std::iter::once(p.exit_time)))
        .collect();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup();
    t
}

/// Points at which step functions of the cohort are compared: every distinct time,
/// midpoints between them, and points before the first and after the last.
pub fn probe_points(cohort: &Cohort<f64>) -> Vec<f64> {
    let t = distinct_times(cohort);
    let mut out = vec![t[0] / 2.0];
    for w in t.windows(2) {
        out.push(w[0]);
        out.push((w[0] + w[1]) / 2.0);
    }
    out.push(*t.last().unwrap());
    out.push(t.last().unwrap() + 1.0);
    out
}

/// Aalen-Johansen as an explicit product of `I + ΔA` matrices.
///
/// At each distinct time the first factor holds all transitions except exits of
/// patients infected at that same instant; those form a second factor whose state-1
/// risk set is everyone in state 1 just after the first factor.
pub fn brute_aalen_johansen(cohort: &Cohort<f64>, t: f64) -> [f64; 6] {
    let ps = cohort.patients();
    let mut m = identity();
    for &s in distinct_times(cohort).iter().filter(|&&s| s <= t) {
        let mut y = [0.0f64; 6];
        let mut dn = [[0.0f64; 6]; 6];
        let mut y1_after = 0.0;
        let mut dn_tie = [[0.0f64; 6]; 6];
        for p in ps {
            let inf = p.infection_time;
            let in0 = inf.is_none_or(|i| i >= s) && p.exit_time >= s;
            let in1 = matches!(inf, Some(i) if i < s) && p.exit_time >= s;
            if in0 {
                y[0] += 1.0;
            }
            if in1 {
                y[1] += 1.0;
            }
            let tie = matches!(inf, Some(i) if i == s && p.exit_time == s);
            if matches!(inf, Some(i) if i == s) {
                dn[0][1] += 1.0;
            }
            if matches!(inf, Some(i) if i <= s) && (p.exit_time > s || tie) {
                y1_after += 1.0;
            }
            if p.exit_time == s {
                if let Some(to) = exit_target(p) {
                    let from = if inf.is_some() { 1 } else { 0 };
                    if tie {
                        dn_tie[1][to] += 1.0;
                    } else {
                        dn[from][to] += 1.0;
                    }
                }
            }
        }
        let mut step = identity();
        for i in 0..2 {
            if y[i] > 0.0 {
                for j in 0..6 {
                    if dn[i][j] > 0.0 {
                        step[i][j] += dn[i][j] / y[i];
                        step[i][i] -= dn[i][j] / y[i];
                    }
                }
            }
        }
        m = mat_mul(&m, &step);
        if dn_tie[1].iter().any(|&v| v > 0.0) {
            let mut step = identity();
            for j in 0..6 {
                if dn_tie[1][j] > 0.0 {
                    step[1][j] += dn_tie[1][j] / y1_after;
                    step[1][1] -= dn_tie[1][j] / y1_after;
                }
            }
            m = mat_mul(&m, &step);
        }
    }
    m[0]
}

/// Incidence of uninfected death when infection censors, by Kaplan-Meier arithmetic.
pub fn brute_cif_p03_0(cohort: &Cohort<f64>, t: f64) -> f64 {
    let ps = cohort.patients();
    let out_time = |p: &PatientHistory<f64>| p.infection_time.unwrap_or(p.exit_time);
    let mut s_prev = 1.0;
    let mut f3 = 0.0;
    for &s in distinct_times(cohort).iter().filter(|&&s| s <= t) {
        let risk = ps.iter().filter(|p| out_time(p) >= s).count() as f64;
        let uninfected_exit = |state: ExitState| {
            ps.iter()
                .filter(|p| p.infection_time.is_none() && !p.censored && p.exit_time == s && p.exit_state == state)
                .count() as f64
        };
        let d2 = uninfected_exit(ExitState::Discharge);
        let d3 = uninfected_exit(ExitState::Death);
        if risk > 0.0 && d2 + d3 > 0.0 {
            f3 += s_prev * d3 / risk;
            s_prev *= 1.0 - (d2 + d3) / risk;
        }
    }
    f3
}

pub fn brute_paf_o(cohort: &Cohort<f64>, t: f64) -> Option<f64> {
    let p = brute_aalen_johansen(cohort, t);
    let death = p[3] + p[5];
    let unexposed = p[0] + p[2] + p[3];
    (death > 0.0 && unexposed > 0.0).then(|| 1.0 - (p[3] / unexposed) / death)
}

pub fn brute_paf_c(cohort: &Cohort<f64>, t: f64) -> Option<f64> {
    let p = brute_aalen_johansen(cohort, t);
    let death = p[3] + p[5];
    (death > 0.0).then(|| (death - brute_cif_p03_0(cohort, t)) / death)
}

/// Crude fraction from counts; `None` when undefined.
pub fn brute_crude(cohort: &Cohort<f64>) -> Option<f64> {
    let ps = cohort.patients();
    if ps.iter().any(|p| p.censored) {
        return None;
    }
    let n = ps.len() as f64;
    let deaths = ps.iter().filter(|p| p.exit_state == ExitState::Death).count() as f64;
    let unexposed: Vec<_> = ps.iter().filter(|p| p.infection_time.is_none()).collect();
    let deaths0 = unexposed.iter().filter(|p| p.exit_state == ExitState::Death).count() as f64;
    if deaths == 0.0 || unexposed.is_empty() {
        return None;
    }
    Some(1.0 - (deaths0 / unexposed.len() as f64) / (deaths / n))
}

/// Landmark fraction by enumeration of the patients at risk at `l`; `None` when a
/// margin is empty or there are no deaths in the window.
pub fn brute_landmark(cohort: &Cohort<f64>, l: f64, h: f64) -> Option<(f64, [u64; 4])> {
    let mut cells = [0u64; 4]; // exposed died, exposed survived, unexposed died, unexposed survived
    for p in cohort.patients() {
        if p.exit_time <= l {
            continue;
        }
        if p.censored && p.exit_time <= l + h {
            return None;
        }
        let exposed = matches!(p.infection_time, Some(i) if i <= l);
        let died = !p.censored && p.exit_state == ExitState::Death && p.exit_time <= l + h;
        let k = match (exposed, died) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        cells[k] += 1;
    }
    let n = cells.iter().sum::<u64>() as f64;
    let deaths = (cells[0] + cells[2]) as f64;
    let n0 = (cells[2] + cells[3]) as f64;
    if n == 0.0 || deaths == 0.0 || n0 == 0.0 || cells[0] + cells[1] == 0 {
        return None;
    }
    Some((1.0 - (cells[2] as f64 / n0) / (deaths / n), cells))
}

/// Patient templates on the time grid {1, 2, 3}: every infection time at or before
/// the exit, with discharge, death or censoring at exit.
pub fn templates() -> Vec<PatientHistory<f64>> {
    let mut out = Vec::new();
    for exit in [1.0, 2.0, 3.0] {
        let mut infections = vec![None];
        infections.extend((1..=exit as usize).map(|k| Some(k as f64)));
        for inf in infections {
            for outcome in 0..3 {
                let p = match outcome {
                    0 => PatientHistory::new("", inf, exit, ExitState::Discharge),
                    1 => PatientHistory::new("", inf, exit, ExitState::Death),
                    _ => PatientHistory::censored_at("", inf, exit),
                };
                out.push(p);
            }
        }
    }
    out
}

/// The fixed enumeration of small cohorts: every multiset of up to three templates,
/// plus a deterministic sample of four- and five-patient cohorts.
pub fn small_cohorts() -> Vec<Cohort<f64>> {
    let t = templates();
    let k = t.len();
    let mut picks: Vec<Vec<usize>> = Vec::new();
    for a in 0..k {
        picks.push(vec![a]);
        for b in a..k {
            picks.push(vec![a, b]);
            for c in b..k {
                picks.push(vec![a, b, c]);
            }
        }
    }
    // linear congruential walk for the larger sizes
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = || {
        state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        ((state >> 33) % k as u64) as usize
    };
    for size in [4, 5] {
        for _ in 0..3000 {
            picks.push((0..size).map(|_| next()).collect());
        }
    }
    picks
        .into_iter()
        .map(|idx| {
            let ps = idx
                .iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mut p = t[i].clone();
                    p.id = format!("p{pos}");
                    p
                })
                .collect();
            Cohort::new(ps).unwrap()
        })
        .collect()
}

/// Largest disagreement between the library and the brute-force oracles over the
/// small-cohort enumeration, with the number of comparisons made.
pub struct BruteReport {
    pub cohorts: usize,
    pub comparisons: usize,
    pub max_error: f64,
    pub mismatches: Vec<String>,
}

pub fn brute_force_suite(tol: f64) -> BruteReport {
    use tdpaf::ajestimator::{aalen_johansen, cif_censor_at_exposure};
    use tdpaf::eventstore::{fourfold_table, LandmarkGrid};
    use tdpaf::paf::{paf_c_curve, paf_crude, paf_lm_separate, paf_o_curve, LandmarkOptions};

    let cohorts = small_cohorts();
    let mut report = BruteReport {
        cohorts: cohorts.len(),
        comparisons: 0,
        max_error: 0.0,
        mismatches: Vec::new(),
    };
    let check = |what: &str, c: &Cohort<f64>, lib: Option<f64>, oracle: Option<f64>, r: &mut BruteReport| {
        r.comparisons += 1;
        let err = match (lib, oracle) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        if err.is_nan() || err > r.max_error {
            r.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        if !(err <= tol) && r.mismatches.len() < 10 {
            r.mismatches.push(format!("{what}: library {lib:?} vs oracle {oracle:?} on {:?}", c.patients()));
        }
    };
    let landmark_options = LandmarkOptions {
        min_cell: 0,
        ..LandmarkOptions::default()
    };
    for c in &cohorts {
        let aj = aalen_johansen(c).unwrap();
        let cif = cif_censor_at_exposure(c).unwrap();
        let o = paf_o_curve(&aj);
        let pc = paf_c_curve(&aj, &cif).unwrap();
        for t in probe_points(c) {
            let lib = aj.at(t);
            let oracle = brute_aalen_johansen(c, t);
            for j in 0..6 {
                check(&format!("P0{j}({t})"), c, Some(lib[j]), Some(oracle[j]), &mut report);
            }
            check(&format!("P03_0({t})"), c, Some(cif.p03_0_at(t)), Some(brute_cif_p03_0(c, t)), &mut report);
            check(&format!("PAF_o({t})"), c, o.at(t), brute_paf_o(c, t), &mut report);
            check(&format!("PAF_c({t})"), c, pc.at(t), brute_paf_c(c, t), &mut report);
        }
        let crude = fourfold_table(c).ok().and_then(|t| paf_crude::<f64>(&t).ok());
        check("crude", c, crude, brute_crude(c), &mut report);
        for l in [0.0, 0.5, 1.0, 1.5, 2.0] {
            for h in [1.0, 2.0] {
                let grid = LandmarkGrid::new(vec![l], h).unwrap();
                let lib = paf_lm_separate(c, &grid, &landmark_options)
                    .ok()
                    .map(|a| a.estimates[0].paf);
                let oracle = brute_landmark(c, l, h).map(|(v, _)| v);
                check(&format!("PAF_LM({l},{h})"), c, lib, oracle, &mut report);
            }
        }
    }
    report
}
