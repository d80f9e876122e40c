use super::landmark::LandmarkEstimate;
use crate::real::Real;

fn tricube<T: Real>(u: T) -> T {
    let a = u.abs();
    if a >= T::one() {
        T::zero()
    } else {
        let c = T::one() - a * a * a;
        c * c * c
    }
}

/// Local-linear regression of `y` on `x` with a tricube kernel, evaluated at `at`.
///
/// Falls back to the kernel-weighted mean where fewer than two points carry weight,
/// and to `None` where no point does.
pub fn local_linear<T: Real>(x: &[T], y: &[T], bandwidth: T, at: &[T]) -> Vec<Option<T>> {
    at.iter()
        .map(|&x0| {
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            let mut support = 0;
            for (&xi, &yi) in x.iter().zip(y) {
                let w = tricube((xi - x0) / bandwidth);
                if w > T::zero() {
                    support += 1;
                }
                let d = xi - x0;
                s0 += w;
                s1 += w * d;
                s2 += w * d * d;
                t0 += w * yi;
                t1 += w * d * yi;
            }
            if support == 0 {
                return None;
            }
            let det = s0 * s2 - s1 * s1;
            if support < 2 || det <= T::epsilon() * s0 * s2 {
                return Some(t0 / s0);
            }
            Some((s2 * t0 - s1 * t1) / det)
        })
        .collect()
}

/// Three times the median spacing of the landmarks.
pub fn default_bandwidth<T: Real>(landmarks: &[T]) -> T {
    let mut gaps: Vec<T> = landmarks.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return T::one();
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    T::lit(3.0) * gaps[gaps.len() / 2]
}

/// Smoothed separate-model fractions at their own landmarks, capped at 1.
pub fn smooth_landmarks<T: Real>(estimates: &[LandmarkEstimate<T>], bandwidth: Option<T>) -> Vec<T> {
    let x: Vec<T> = estimates.iter().map(|e| e.landmark).collect();
    let y: Vec<T> = estimates.iter().map(|e| e.paf).collect();
    let h = bandwidth.unwrap_or_else(|| default_bandwidth(&x));
    local_linear(&x, &y, h, &x)
        .into_iter()
        .zip(&y)
        .map(|(s, &raw)| s.unwrap_or(raw).min(T::one()))
        .collect()
}
