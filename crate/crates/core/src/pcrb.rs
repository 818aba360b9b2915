//! Recursive posterior information matrix (PIM) for the joint UE + map state
//! and the error bounds read off its inverse.
//!
//! State ordering: UE `(x, y, heading, bias)` in rows 0..4, then three rows
//! per landmark in scenario order. The BS is known and owns no rows; its
//! path still informs the UE block.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix5};
use serde::{Deserialize, Serialize};

use crate::dynamics::{nominal_trajectory, transition_jacobian, MotionConfig};
use crate::error::{Error, Result};
use crate::geometry::{Scenario, UeState};
use crate::jacobians::meas_jacobians;
use crate::scalar::{lit, Real};
use crate::sensing::MeasurementNoise;

/// Condition number above which inverses are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct JointInfoMatrix<T: Real> {
    pub matrix: DMatrix<T>,
}

impl<T: Real> JointInfoMatrix<T> {
    pub fn landmark_count(&self) -> usize {
        (self.matrix.nrows() - 4) / 3
    }

    /// First row of landmark `i` (0-based).
    pub fn landmark_offset(i: usize) -> usize {
        4 + 3 * i
    }
}

/// Inverse of a symmetric positive definite matrix through Cholesky, with a
/// condition-number guard.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let sym = (m + m.transpose()) * lit::<T>(0.5);
    let eig = sym.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((T::max_value().unwrap(), T::min_value().unwrap()), |(lo, hi), e| {
            (lo.min(*e), hi.max(*e))
        });
    if !(lo > T::zero()) {
        return Err(Error::NumericalFailure(format!(
            "matrix is not positive definite (min eigenvalue {lo})"
        )));
    }
    if hi / lo > lit(MAX_CONDITION) {
        return Err(Error::NumericalFailure(format!(
            "condition number {} exceeds guard",
            hi / lo
        )));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky factorization failed".into()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * lit::<T>(0.5))
}

/// `J_0 = blkdiag(P_ue^-1, P_lm^-1, ..., P_lm^-1)`.
pub fn pim_init<T: Real>(
    ue_prior_cov: &Matrix4<T>,
    lm_prior_cov: &Matrix3<T>,
    landmarks: usize,
) -> Result<JointInfoMatrix<T>> {
    let ue_inf = ue_prior_cov
        .cholesky()
        .ok_or(Error::SingularPrior)?
        .inverse();
    let lm_inf = lm_prior_cov
        .cholesky()
        .ok_or(Error::SingularPrior)?
        .inverse();
    let n = 4 + 3 * landmarks;
    let mut j = DMatrix::zeros(n, n);
    j.view_mut((0, 0), (4, 4)).copy_from(&ue_inf);
    for i in 0..landmarks {
        let o = JointInfoMatrix::<T>::landmark_offset(i);
        j.view_mut((o, o), (3, 3)).copy_from(&lm_inf);
    }
    Ok(JointInfoMatrix { matrix: j })
}

/// Which paths are observed at a step: index 0 is the BS, index `i + 1` is
/// `scenario.landmarks[i]`.
pub fn all_detected(landmarks: usize) -> Vec<bool> {
    vec![true; landmarks + 1]
}

/// Fisher information of one scan, `H^T R^-1 H`, with ground-truth data
/// association. Undetected paths contribute nothing.
pub fn data_information<T: Real>(
    ue: &UeState<T>,
    scenario: &Scenario<T>,
    speed: T,
    noise: &MeasurementNoise<T>,
    with_doppler: bool,
    detected: &[bool],
) -> Result<DMatrix<T>> {
    let n_lm = scenario.landmarks.len();
    if detected.len() != n_lm + 1 {
        return Err(Error::LengthMismatch(detected.len(), n_lm + 1));
    }
    let dim = if with_doppler { 6 } else { 5 };
    let r_inv = spd_inverse(&noise.covariance(with_doppler))?;
    let n = 4 + 3 * n_lm;
    let mut j = DMatrix::zeros(n, n);
    let bs_pos = scenario.bs.position;
    let paths = std::iter::once(&scenario.bs).chain(scenario.landmarks.iter());
    for (k, lm) in paths.enumerate() {
        if !detected[k] {
            continue;
        }
        let (a, b) = meas_jacobians(lm, &bs_pos, ue, speed)?;
        let a = a.0.rows(0, dim).into_owned();
        let ra = &r_inv * &a;
        let mut ue_block = j.view_mut((0, 0), (4, 4));
        ue_block += a.transpose() * &ra;
        if let Some(b) = b {
            let b = b.0.rows(0, dim).into_owned();
            let o = JointInfoMatrix::<T>::landmark_offset(k - 1);
            let cross = b.transpose() * &ra;
            let mut lb = j.view_mut((o, o), (3, 3));
            lb += b.transpose() * &r_inv * &b;
            let mut c = j.view_mut((o, 0), (3, 4));
            c += &cross;
            let mut ct = j.view_mut((0, o), (4, 3));
            ct += cross.transpose();
        }
    }
    Ok(j)
}

/// One step of `J_k = H^T R^-1 H + (Q + F J_{k-1}^-1 F^T)^-1`.
///
/// `prev_ue` is the true state at `k-1` (the transition is linearized there)
/// and `ue` the true state at `k` (the measurement model is linearized there).
#[allow(clippy::too_many_arguments)]
pub fn pim_step<T: Real>(
    prev: &JointInfoMatrix<T>,
    prev_ue: &UeState<T>,
    ue: &UeState<T>,
    scenario: &Scenario<T>,
    motion: &MotionConfig<T>,
    noise: &MeasurementNoise<T>,
    with_doppler: bool,
    detected: &[bool],
) -> Result<JointInfoMatrix<T>> {
    let n = prev.matrix.nrows();
    if n != 4 + 3 * scenario.landmarks.len() {
        return Err(Error::LengthMismatch(n, 4 + 3 * scenario.landmarks.len()));
    }
    let cov = spd_inverse(&prev.matrix)?;
    let f = transition_jacobian(prev_ue, motion);
    let mut big_f = DMatrix::identity(n, n);
    big_f.view_mut((0, 0), (4, 4)).copy_from(&f);
    let mut pred = &big_f * cov * big_f.transpose();
    let mut ue_block = pred.view_mut((0, 0), (4, 4));
    ue_block += motion.process_noise;
    let prior = spd_inverse(&pred)?;
    let data = data_information(ue, scenario, motion.speed, noise, with_doppler, detected)?;
    Ok(JointInfoMatrix {
        matrix: data + prior,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport<T> {
    /// Position error bound, m.
    pub peb: T,
    /// Heading error bound, rad.
    pub heb: T,
    /// Clock-bias error bound, m.
    pub ceb: T,
    /// Per-landmark error bounds, m.
    pub leb: Vec<T>,
    pub leb_avg: T,
}

impl<T: Real> BoundsReport<T> {
    pub fn heb_deg(&self) -> T {
        self.heb * lit(180.0) / T::pi()
    }

    fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            peb: f(self.peb),
            heb: f(self.heb),
            ceb: f(self.ceb),
            leb: self.leb.iter().map(|v| f(*v)).collect(),
            leb_avg: f(self.leb_avg),
        }
    }
}

pub fn extract_bounds<T: Real>(j: &JointInfoMatrix<T>) -> Result<BoundsReport<T>> {
    let cov = spd_inverse(&j.matrix)?;
    let d = cov.diagonal();
    let peb = (d[0] + d[1]).sqrt();
    let leb: Vec<T> = (0..j.landmark_count())
        .map(|i| {
            let o = JointInfoMatrix::<T>::landmark_offset(i);
            (d[o] + d[o + 1] + d[o + 2]).sqrt()
        })
        .collect();
    let leb_avg = if leb.is_empty() {
        T::zero()
    } else {
        leb.iter().fold(T::zero(), |a, b| a + *b) / T::from_usize(leb.len()).unwrap()
    };
    Ok(BoundsReport {
        peb,
        heb: d[2].sqrt(),
        ceb: d[3].sqrt(),
        leb,
        leb_avg,
    })
}

/// Per-path split of the UE and landmark diagonal information blocks into
/// the range/angle part and the Doppler part.
#[derive(Clone, Debug)]
pub struct DopplerDecomposition<T: Real> {
    pub ue_non_doppler: Matrix4<T>,
    pub ue_doppler: Matrix4<T>,
    pub lm_non_doppler: Vec<Matrix3<T>>,
    pub lm_doppler: Vec<Matrix3<T>>,
    /// Doppler UE term of each path (BS first, then landmarks).
    pub ue_doppler_per_path: Vec<Matrix4<T>>,
}

/// Requires the Doppler noise to be uncorrelated with the other components,
/// which holds for [`MeasurementNoise`] by construction.
pub fn doppler_decomposition<T: Real>(
    ue: &UeState<T>,
    scenario: &Scenario<T>,
    speed: T,
    noise: &MeasurementNoise<T>,
) -> Result<DopplerDecomposition<T>> {
    let r_inv: Matrix5<T> = noise
        .non_doppler
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("measurement noise not positive definite".into()))?
        .inverse();
    let inv_var = T::one() / (noise.sigma_d * noise.sigma_d);
    let mut out = DopplerDecomposition {
        ue_non_doppler: Matrix4::zeros(),
        ue_doppler: Matrix4::zeros(),
        lm_non_doppler: Vec::with_capacity(scenario.landmarks.len()),
        lm_doppler: Vec::with_capacity(scenario.landmarks.len()),
        ue_doppler_per_path: Vec::with_capacity(scenario.landmarks.len() + 1),
    };
    let bs_pos = scenario.bs.position;
    for lm in std::iter::once(&scenario.bs).chain(scenario.landmarks.iter()) {
        let (a, b) = meas_jacobians(lm, &bs_pos, ue, speed)?;
        let at = a.non_doppler();
        let ad = a.doppler_row();
        out.ue_non_doppler += at.transpose() * r_inv * at;
        let dop = ad.transpose() * ad * inv_var;
        out.ue_doppler += dop;
        out.ue_doppler_per_path.push(dop);
        if let Some(b) = b {
            let bt = b.non_doppler();
            let bd = b.doppler_row();
            out.lm_non_doppler.push(bt.transpose() * r_inv * bt);
            out.lm_doppler.push(bd.transpose() * bd * inv_var);
        }
    }
    Ok(out)
}

/// Bound series over a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSetup<T: Real> {
    pub scenario: Scenario<T>,
    pub motion: MotionConfig<T>,
    pub init: UeState<T>,
    pub ue_prior_cov: Matrix4<T>,
    pub lm_prior_cov: Matrix3<T>,
    pub steps: usize,
}

impl<T: Real> BoundSetup<T> {
    /// Landmark prior covariance `100 I_3` (m^2).
    pub fn standard() -> Self {
        Self {
            scenario: Scenario::standard(),
            motion: MotionConfig::standard(),
            init: UeState::new(lit(70.7285), T::zero(), T::frac_pi_2(), lit(300.0)),
            ue_prior_cov: Matrix4::from_diagonal(&nalgebra::Vector4::new(
                lit(0.3),
                lit(0.3),
                lit(0.0052),
                lit(0.3),
            )),
            lm_prior_cov: Matrix3::identity() * lit::<T>(100.0),
            steps: 40,
        }
    }

    /// Bounds at steps `1..=steps` of the nominal trajectory, all paths
    /// detected at every step.
    pub fn run(&self, noise: &MeasurementNoise<T>, with_doppler: bool) -> Result<Vec<BoundsReport<T>>> {
        let n = self.scenario.landmarks.len();
        let detected = all_detected(n);
        let mut j = pim_init(&self.ue_prior_cov, &self.lm_prior_cov, n)?;
        let mut prev = self.init;
        let mut out = Vec::with_capacity(self.steps);
        for ue in nominal_trajectory(&self.init, &self.motion, self.steps) {
            j = pim_step(&j, &prev, &ue, &self.scenario, &self.motion, noise, with_doppler, &detected)?;
            out.push(extract_bounds(&j)?);
            prev = ue;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Bound at the last step.
    Final,
    /// Mean of the bound over all steps.
    Mean,
}

impl Aggregation {
    pub fn apply<T: Real>(self, series: &[BoundsReport<T>]) -> BoundsReport<T> {
        match self {
            Aggregation::Final => series.last().cloned().expect("non-empty series"),
            Aggregation::Mean => {
                let n = T::from_usize(series.len()).unwrap();
                let mut acc = series[0].clone();
                for s in &series[1..] {
                    acc.peb += s.peb;
                    acc.heb += s.heb;
                    acc.ceb += s.ceb;
                    acc.leb_avg += s.leb_avg;
                    for (a, b) in acc.leb.iter_mut().zip(&s.leb) {
                        *a += *b;
                    }
                }
                acc.map(|v| v / n)
            }
        }
    }
}

/// One cell of a sigma_d sweep: `sigma_d == None` is the no-Doppler baseline.
#[derive(Clone, Debug)]
pub struct SweepCell<T: Real> {
    pub sigma_d: Option<T>,
    pub series: Vec<BoundsReport<T>>,
}

impl<T: Real> SweepCell<T> {
    pub fn doppler_enabled(&self) -> bool {
        self.sigma_d.is_some()
    }
}

/// Runs the recursion for every `sigma_d` in `grid` with Doppler, plus the
/// baseline without Doppler (last cell).
pub fn sweep_sigma_d<T: Real>(
    setup: &BoundSetup<T>,
    base_noise: &MeasurementNoise<T>,
    grid: &[T],
) -> Result<Vec<SweepCell<T>>> {
    if grid.is_empty() || grid.iter().any(|s| !(*s > T::zero())) {
        return Err(Error::Config("sigma_d grid must be non-empty and positive".into()));
    }
    let mut cells = Vec::with_capacity(grid.len() + 1);
    for &s in grid {
        let noise = MeasurementNoise {
            sigma_d: s,
            ..base_noise.clone()
        };
        cells.push(SweepCell {
            sigma_d: Some(s),
            series: setup.run(&noise, true)?,
        });
    }
    cells.push(SweepCell {
        sigma_d: None,
        series: setup.run(base_noise, false)?,
    });
    Ok(cells)
}

fn sweep_header(landmarks: usize) -> String {
    let mut h = String::from("sigma_d,doppler_enabled,k,PEB_m,HEB_rad,HEB_deg,CEB_m,LEB_avg_m");
    for i in 1..=landmarks {
        let _ = write!(h, ",LEB_{i}_m");
    }
    h.push('\n');
    h
}

fn sweep_row(out: &mut String, sigma_d: Option<f64>, k: &str, r: &BoundsReport<f64>) {
    match sigma_d {
        Some(s) => {
            let _ = write!(out, "{s:.15e},true,");
        }
        None => out.push_str(",false,"),
    }
    let _ = write!(
        out,
        "{k},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
        r.peb,
        r.heb,
        r.heb_deg(),
        r.ceb,
        r.leb_avg
    );
    for l in &r.leb {
        let _ = write!(out, ",{l:.15e}");
    }
    out.push('\n');
}

/// Per-step CSV: every step of every cell, baseline rows with an empty
/// `sigma_d` field.
pub fn sweep_to_csv(cells: &[SweepCell<f64>]) -> String {
    let n = cells.first().and_then(|c| c.series.first()).map_or(0, |r| r.leb.len());
    let steps = cells.first().map_or(0, |c| c.series.len());
    let mut out = sweep_header(n);
    for k in 0..steps {
        for c in cells {
            sweep_row(&mut out, c.sigma_d, &(k + 1).to_string(), &c.series[k]);
        }
    }
    out
}

/// One row per cell with the aggregated bounds; `k` holds the aggregation name.
pub fn sweep_summary_csv(cells: &[SweepCell<f64>], agg: Aggregation) -> String {
    let n = cells.first().and_then(|c| c.series.first()).map_or(0, |r| r.leb.len());
    let label = match agg {
        Aggregation::Final => "final",
        Aggregation::Mean => "mean",
    };
    let mut out = sweep_header(n);
    for c in cells {
        sweep_row(&mut out, c.sigma_d, label, &agg.apply(&c.series));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn init_is_block_inverse() {
        let p = Matrix4::from_diagonal(&nalgebra::Vector4::new(0.3, 0.3, 0.0052, 0.3));
        let j = pim_init(&p, &(Matrix3::identity() * 100.0), 2).unwrap();
        assert_eq!(j.matrix.nrows(), 10);
        assert_relative_eq!(j.matrix[(2, 2)], 1.0 / 0.0052, epsilon = 1e-9);
        assert_relative_eq!(j.matrix[(7, 7)], 0.01, epsilon = 1e-15);
        assert_eq!(j.matrix[(0, 4)], 0.0);
        let j0 = pim_init(&p, &Matrix3::identity(), 0).unwrap();
        assert_eq!(j0.matrix.shape(), (4, 4));
        assert!(matches!(
            pim_init(&(p * -1.0), &Matrix3::identity(), 1),
            Err(Error::SingularPrior)
        ));
    }

    #[test]
    fn bounds_of_simple_matrices() {
        let j = JointInfoMatrix { matrix: DMatrix::<f64>::identity(7, 7) };
        let b = extract_bounds(&j).unwrap();
        assert_relative_eq!(b.peb, 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(b.heb, 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.ceb, 1.0, epsilon = 1e-14);
        assert_relative_eq!(b.leb[0], 3f64.sqrt(), epsilon = 1e-14);

        let d = nalgebra::DVector::from_vec(vec![4.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let b = extract_bounds(&JointInfoMatrix { matrix: DMatrix::from_diagonal(&d) }).unwrap();
        assert_relative_eq!(b.peb, 0.5f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(b.leb_avg, 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn prior_only_recursion_grows_peb() {
        let setup = BoundSetup::<f64> {
            scenario: Scenario { landmarks: vec![], ..Scenario::standard() },
            ..BoundSetup::standard()
        };
        let motion = &setup.motion;
        let mut j = pim_init(&setup.ue_prior_cov, &setup.lm_prior_cov, 0).unwrap();
        let mut prev = setup.init;
        let mut last = extract_bounds(&j).unwrap().peb;
        let noise = MeasurementNoise::standard(0.1);
        for ue in nominal_trajectory(&setup.init, motion, 10) {
            let next = pim_step(&j, &prev, &ue, &setup.scenario, motion, &noise, true, &[false]).unwrap();
            let f = DMatrix::from_iterator(4, 4, transition_jacobian(&prev, motion).iter().copied());
            let q = DMatrix::from_iterator(4, 4, motion.process_noise.iter().copied());
            let pred = &f * spd_inverse(&j.matrix).unwrap() * f.transpose() + q;
            let expect = spd_inverse(&pred).unwrap();
            assert_relative_eq!(next.matrix, expect, epsilon = 1e-9);
            let peb = extract_bounds(&next).unwrap().peb;
            assert!(peb >= last);
            last = peb;
            j = next;
            prev = ue;
        }
    }

    #[test]
    fn huge_sigma_d_removes_doppler_information() {
        let setup = BoundSetup::<f64>::standard();
        let ue = nominal_trajectory(&setup.init, &setup.motion, 3)[2];
        let det = all_detected(8);
        let gap = |sigma_d: f64| {
            let noise = MeasurementNoise::standard(sigma_d);
            let with = data_information(&ue, &setup.scenario, 22.22, &noise, true, &det).unwrap();
            let without = data_information(&ue, &setup.scenario, 22.22, &noise, false, &det).unwrap();
            (&with - &without).norm() / with.norm()
        };
        assert!(gap(1e3) < 1e-4);
        // Doppler information scales as 1 / sigma_d^2.
        assert_relative_eq!(gap(1e2) / gap(1e3), 100.0, max_relative = 1e-4);
    }

    #[test]
    fn data_information_is_psd_ordered() {
        let setup = BoundSetup::<f64>::standard();
        let det = all_detected(8);
        for ue in nominal_trajectory(&setup.init, &setup.motion, 40).iter().step_by(7) {
            let noise = MeasurementNoise::standard(0.1);
            let with = data_information(ue, &setup.scenario, 22.22, &noise, true, &det).unwrap();
            let without = data_information(ue, &setup.scenario, 22.22, &noise, false, &det).unwrap();
            let diff = with - without;
            let min = diff.symmetric_eigenvalues().min();
            assert!(min >= -1e-10 * 1e3, "{min}");
        }
    }

    #[test]
    fn decomposition_sums_to_data_blocks() {
        let setup = BoundSetup::<f64>::standard();
        let ue = UeState::new(20.0, 60.0, 2.9, 300.0);
        let noise = MeasurementNoise::standard(0.2);
        let dec = doppler_decomposition(&ue, &setup.scenario, 22.22, &noise).unwrap();
        let data = data_information(&ue, &setup.scenario, 22.22, &noise, true, &all_detected(8)).unwrap();
        let ue_block = data.fixed_view::<4, 4>(0, 0).into_owned();
        let sum = dec.ue_non_doppler + dec.ue_doppler;
        assert!((sum - ue_block).norm() <= 1e-10 * ue_block.norm());
        for i in 0..8 {
            let o = JointInfoMatrix::<f64>::landmark_offset(i);
            let blk = data.fixed_view::<3, 3>(o, o).into_owned();
            let sum = dec.lm_non_doppler[i] + dec.lm_doppler[i];
            assert!((sum - blk).norm() <= 1e-10 * blk.norm());
        }
        assert!(dec.ue_doppler.row(3).iter().all(|v| *v == 0.0));
        assert!(dec.ue_doppler.column(3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn removing_a_landmark_never_helps() {
        let setup = BoundSetup::<f64>::standard();
        let noise = MeasurementNoise::standard(0.1);
        let n = 8;
        let traj = nominal_trajectory(&setup.init, &setup.motion, 10);
        let run = |det: &[bool]| {
            let mut j = pim_init(&setup.ue_prior_cov, &setup.lm_prior_cov, n).unwrap();
            let mut prev = setup.init;
            for ue in &traj {
                j = pim_step(&j, &prev, ue, &setup.scenario, &setup.motion, &noise, true, det).unwrap();
                prev = *ue;
            }
            extract_bounds(&j).unwrap()
        };
        let full = run(&all_detected(n));
        for drop in 0..=n {
            let mut det = all_detected(n);
            det[drop] = false;
            let fewer = run(&det);
            assert!(fewer.peb >= full.peb - 1e-12, "dropping path {drop}");
        }
    }

    #[test]
    fn csv_layout() {
        let setup = BoundSetup::<f64> { steps: 2, ..BoundSetup::standard() };
        let cells = sweep_sigma_d(&setup, &MeasurementNoise::standard(0.1), &[0.1, 0.2]).unwrap();
        let csv = sweep_to_csv(&cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("sigma_d,doppler_enabled,k,PEB_m,HEB_rad,HEB_deg,CEB_m,LEB_avg_m,LEB_1_m"));
        assert!(lines[0].ends_with("LEB_8_m"));
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[3].starts_with(",false,1,"));
        assert_eq!(lines[1].split(',').count(), 16);
        assert!(sweep_sigma_d(&setup, &MeasurementNoise::standard(0.1), &[]).is_err());
        let summary = sweep_summary_csv(&cells, Aggregation::Mean);
        assert_eq!(summary.lines().count(), 4);
    }
}
