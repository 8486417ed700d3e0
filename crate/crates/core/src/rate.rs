//! Empirical convergence-rate estimation from an error sequence `e_k = ‖p^k − p⋆‖`.

use serde::Serialize;

/// Errors at or below this value are treated as numerical noise.
pub const ERROR_FLOOR: f64 = 1e-12;
pub const MIN_POINTS: usize = 4;
/// Number of trailing points used for the tail statistics.
pub const TAIL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateClass {
    QQuadratic,
    QSuperlinear,
    QLinear,
    Unclassified,
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// Errors used, i.e. the prefix strictly above the floor.
    pub errors: Vec<f64>,
    /// `e_{k+1} / e_k`.
    pub linear_ratios: Vec<f64>,
    /// `e_{k+1} / e_k²`.
    pub quadratic_factors: Vec<f64>,
    /// Least-squares slope of `log e_{k+1}` against `log e_k` over the tail.
    pub tail_slope: Option<f64>,
    pub class: RateClass,
}

impl RateReport {
    pub fn tail_ratios(&self) -> &[f64] {
        tail(&self.linear_ratios)
    }

    pub fn tail_quadratic_factors(&self) -> &[f64] {
        tail(&self.quadratic_factors)
    }
}

fn tail<T>(v: &[T]) -> &[T] {
    &v[v.len().saturating_sub(TAIL)..]
}

fn lsq_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn estimate_rate(errors: &[f64]) -> RateReport {
    let usable: Vec<f64> = errors.iter().copied().take_while(|&e| e > ERROR_FLOOR && e.is_finite()).collect();
    let linear_ratios: Vec<f64> = usable.windows(2).map(|w| w[1] / w[0]).collect();
    let quadratic_factors: Vec<f64> = usable.windows(2).map(|w| w[1] / (w[0] * w[0])).collect();
    let pts: Vec<(f64, f64)> = usable.windows(2).map(|w| (w[0].ln(), w[1].ln())).collect();
    let tail_slope = lsq_slope(tail(&pts));
    let mut report = RateReport {
        errors: usable,
        linear_ratios,
        quadratic_factors,
        tail_slope,
        class: RateClass::InsufficientData,
    };
    if report.errors.len() < MIN_POINTS {
        return report;
    }
    let ratios = report.tail_ratios();
    let factors = report.tail_quadratic_factors();
    let quadratic = factors.iter().all(|&q| (1e-3..=1e3).contains(&q)) && tail_slope.is_some_and(|s| s >= 1.5);
    let superlinear = ratios.windows(2).all(|w| w[1] < w[0]) && ratios.last().is_some_and(|&r| r < 0.1);
    let linear = ratios.iter().all(|&r| r <= 0.9);
    report.class = if quadratic {
        RateClass::QQuadratic
    } else if superlinear {
        RateClass::QSuperlinear
    } else if linear {
        RateClass::QLinear
    } else {
        RateClass::Unclassified
    };
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_sequence_is_linear() {
        let e: Vec<f64> = (0..12).map(|k| 0.5f64.powi(k)).collect();
        let r = estimate_rate(&e);
        assert!(r.linear_ratios.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        assert_eq!(r.class, RateClass::QLinear);
        assert!((r.tail_slope.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn squaring_sequence_is_quadratic() {
        let e: Vec<f64> = (0..6).map(|k| 0.5f64.powi(1 << k)).collect();
        let r = estimate_rate(&e);
        assert_eq!(r.class, RateClass::QQuadratic);
        assert!((r.tail_slope.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn floor_truncates_and_short_is_insufficient() {
        let r = estimate_rate(&[1e-1, 1e-2, 1e-13, 1e-3]);
        assert_eq!(r.errors, vec![1e-1, 1e-2]);
        assert_eq!(r.class, RateClass::InsufficientData);
    }

    #[test]
    fn shrinking_ratios_are_superlinear() {
        // e_{k+1} = e_k / (k + 2)^2: ratios decay, slope stays near 1.
        let mut e = vec![1.0];
        for k in 0..6 {
            let last = *e.last().unwrap();
            e.push(last / ((k + 2) as f64).powi(2));
        }
        let r = estimate_rate(&e);
        assert_eq!(r.class, RateClass::QSuperlinear);
    }

    #[test]
    fn stagnation_is_unclassified() {
        let r = estimate_rate(&[1.0, 0.99, 0.985, 0.98, 0.975]);
        assert_eq!(r.class, RateClass::Unclassified);
    }
}
