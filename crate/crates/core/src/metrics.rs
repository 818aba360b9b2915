//! Mapping and positioning error metrics.

use nalgebra::{Scalar, Vector3};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_lap, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::UeState;
use crate::scalar::wrap_angle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GospaParams<T> {
    /// Cut-off distance, m.
    pub cutoff: T,
    pub order: T,
    pub alpha: T,
}

impl GospaParams<f64> {
    /// c = 20 m, p = 2, alpha = 2.
    pub fn standard() -> Self {
        Self {
            cutoff: 20.0,
            order: 2.0,
            alpha: 2.0,
        }
    }
}

impl<T: Float> GospaParams<T> {
    pub fn validate(&self) -> Result<()> {
        let two = T::one() + T::one();
        if !(self.cutoff > T::zero() && self.order >= T::one() && self.alpha > T::zero() && self.alpha <= two) {
            return Err(Error::Config("GOSPA requires c > 0, p >= 1, 0 < alpha <= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GospaResult<T> {
    pub total: T,
    /// Sum of `d^p` over assigned pairs.
    pub localization: T,
    /// Unassigned ground-truth points.
    pub missed: usize,
    /// Unassigned estimates.
    pub false_targets: usize,
}

fn distance<T: Float + Scalar>(a: &Vector3<T>, b: &Vector3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// GOSPA distance between two finite point sets.
///
/// Pairs farther apart than the cut-off are never assigned; each point left
/// unassigned costs `c^p / alpha`.
pub fn gospa<T: Float + Scalar>(
    truth: &[Vector3<T>],
    est: &[Vector3<T>],
    params: &GospaParams<T>,
) -> GospaResult<T> {
    let p = params.order;
    let unassigned = params.cutoff.powf(p) / params.alpha;
    let n = truth.len();
    let m = est.len();
    let mut c = CostMatrix::filled(n, m + n, T::infinity());
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in est.iter().enumerate() {
            let d = distance(t, e);
            if d < params.cutoff {
                c.set(i, j, d.powf(p) - unassigned);
            }
        }
        c.set(i, m + i, unassigned);
    }
    // Always feasible thanks to the per-row dummy column.
    let a = solve_lap(&c).expect("dummy columns keep GOSPA assignment feasible");
    let mut localization = T::zero();
    let mut paired = 0usize;
    for (i, &j) in a.row_to_col.iter().enumerate() {
        if j < m {
            localization = localization + distance(&truth[i], &est[j]).powf(p);
            paired += 1;
        }
    }
    let missed = n - paired;
    let false_targets = m - paired;
    let penalty = unassigned * T::from(missed + false_targets).unwrap();
    GospaResult {
        total: (localization + penalty).powf(T::one() / p),
        localization,
        missed,
        false_targets,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub pos_m: f64,
    pub heading_rad: f64,
    pub bias_m: f64,
}

impl Rmse {
    pub fn heading_deg(&self) -> f64 {
        self.heading_rad.to_degrees()
    }
}

/// Running sums of squared UE errors; merges across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RmseAccumulator {
    pub pos_sq: f64,
    pub heading_sq: f64,
    pub bias_sq: f64,
    pub count: usize,
}

impl RmseAccumulator {
    pub fn push(&mut self, truth: &UeState<f64>, est: &UeState<f64>) {
        self.pos_sq += (truth.x - est.x).powi(2) + (truth.y - est.y).powi(2);
        self.heading_sq += wrap_angle(truth.heading - est.heading).powi(2);
        self.bias_sq += (truth.clock_bias - est.clock_bias).powi(2);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.pos_sq += other.pos_sq;
        self.heading_sq += other.heading_sq;
        self.bias_sq += other.bias_sq;
        self.count += other.count;
    }

    pub fn finish(&self) -> Rmse {
        if self.count == 0 {
            return Rmse::default();
        }
        let n = self.count as f64;
        Rmse {
            pos_m: (self.pos_sq / n).sqrt(),
            heading_rad: (self.heading_sq / n).sqrt(),
            bias_m: (self.bias_sq / n).sqrt(),
        }
    }
}

/// RMSE over aligned truth/estimate series.
pub fn rmse(truth: &[UeState<f64>], est: &[UeState<f64>]) -> Result<Rmse> {
    if truth.len() != est.len() {
        return Err(Error::LengthMismatch(truth.len(), est.len()));
    }
    let mut acc = RmseAccumulator::default();
    for (t, e) in truth.iter().zip(est) {
        acc.push(t, e);
    }
    Ok(acc.finish())
}

/// Per-run evaluation series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub gospa_va: Vec<f64>,
    pub gospa_sp: Vec<f64>,
    pub correct_da_weight: Vec<f64>,
    pub rmse: RmseAccumulator,
}

impl MetricsSeries {
    pub fn mean_correct_da_weight(&self) -> f64 {
        if self.correct_da_weight.is_empty() {
            return 0.0;
        }
        self.correct_da_weight.iter().sum::<f64>() / self.correct_da_weight.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pts(v: &[[f64; 3]]) -> Vec<Vector3<f64>> {
        v.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect()
    }

    /// Minimum over every partial matching, by enumeration.
    fn gospa_brute(x: &[Vector3<f64>], y: &[Vector3<f64>], prm: &GospaParams<f64>) -> f64 {
        fn rec(i: usize, x: &[Vector3<f64>], y: &[Vector3<f64>], used: &mut Vec<bool>, prm: &GospaParams<f64>) -> f64 {
            let pen = prm.cutoff.powf(prm.order) / prm.alpha;
            if i == x.len() {
                return pen * used.iter().filter(|u| !**u).count() as f64;
            }
            let mut best = pen + rec(i + 1, x, y, used, prm);
            for j in 0..y.len() {
                let d = (x[i] - y[j]).norm();
                if !used[j] && d < prm.cutoff {
                    used[j] = true;
                    best = best.min(d.powf(prm.order) + rec(i + 1, x, y, used, prm));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, x, y, &mut vec![false; y.len()], prm).powf(1.0 / prm.order)
    }

    #[test]
    fn empty_estimate_anchor() {
        let truth = pts(&[[200.0, 0.0, 40.0], [-200.0, 0.0, 40.0], [0.0, 200.0, 40.0], [0.0, -200.0, 40.0]]);
        let g = gospa(&truth, &[], &GospaParams::standard());
        assert_relative_eq!(g.total, 28.2842712474619, epsilon = 1e-9);
        assert_eq!(g.missed, 4);
    }

    #[test]
    fn identical_and_single_pair() {
        let truth = pts(&[[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]]);
        assert_eq!(gospa(&truth, &truth, &GospaParams::standard()).total, 0.0);
        let g = gospa(&pts(&[[0.0, 0.0, 0.0]]), &pts(&[[3.0, 0.0, 0.0]]), &GospaParams::standard());
        assert_relative_eq!(g.total, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn far_false_estimate_adds_fixed_penalty() {
        let prm = GospaParams::standard();
        let truth = pts(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let est = pts(&[[0.5, 0.0, 0.0], [10.0, 1.0, 0.0]]);
        let base = gospa(&truth, &est, &prm);
        let mut more = est.clone();
        more.push(Vector3::new(500.0, 0.0, 0.0));
        let g = gospa(&truth, &more, &prm);
        assert_eq!(g.false_targets, base.false_targets + 1);
        assert_relative_eq!(g.total.powi(2) - base.total.powi(2), 400.0 / 2.0, epsilon = 1e-9);
    }

    fn arb_set() -> impl Strategy<Value = Vec<Vector3<f64>>> {
        prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, -5.0..5.0f64), 0..=4)
            .prop_map(|v| v.into_iter().map(|(a, b, c)| Vector3::new(a, b, c)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn gospa_is_a_metric(x in arb_set(), y in arb_set(), z in arb_set()) {
            let prm = GospaParams::standard();
            let xy = gospa(&x, &y, &prm).total;
            let yx = gospa(&y, &x, &prm).total;
            prop_assert!((xy - yx).abs() < 1e-9);
            let xz = gospa(&x, &z, &prm).total;
            let zy = gospa(&z, &y, &prm).total;
            prop_assert!(xy <= xz + zy + 1e-9);
            prop_assert!((xy - gospa_brute(&x, &y, &prm)).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_cases() {
        let t: Vec<_> = (0..5).map(|i| UeState::new(i as f64, 0.0, 0.1, 300.0)).collect();
        assert_eq!(rmse(&t, &t).unwrap(), Rmse::default());
        let shifted: Vec<_> = t.iter().map(|s| UeState { x: s.x + 1.0, ..*s }).collect();
        assert_relative_eq!(rmse(&t, &shifted).unwrap().pos_m, 1.0, epsilon = 1e-12);
        assert!(matches!(rmse(&t, &t[..3]), Err(Error::LengthMismatch(5, 3))));

        let a = [UeState::new(0.0, 0.0, PI - 0.1, 0.0)];
        let b = [UeState::new(0.0, 0.0, -PI + 0.1, 0.0)];
        assert_relative_eq!(rmse(&a, &b).unwrap().heading_rad, 0.2, epsilon = 1e-12);
    }
}
