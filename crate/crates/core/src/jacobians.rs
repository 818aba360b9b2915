//! Analytic first derivatives of the channel parameters.
//!
//! Row order everywhere: range, AOA az, AOA el, AOD az, AOD el, Doppler.
//! UE columns: x, y, heading, clock bias. Landmark columns: x, y, z.

use nalgebra::{Matrix2x3, Matrix3, Matrix5x3, Matrix5x4, Matrix6x3, Matrix6x4, RowVector3, RowVector4, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{measure, path_vectors, va_intersection, Landmark, LandmarkKind, UeState};
use crate::scalar::{lit, wrap_angle, Real};

/// Derivative of the measurement w.r.t. the UE state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasJacobianUe<T: Real>(pub Matrix6x4<T>);

/// Derivative of the measurement w.r.t. the landmark position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasJacobianLm<T: Real>(pub Matrix6x3<T>);

impl<T: Real> MeasJacobianUe<T> {
    /// Range and angle rows.
    pub fn non_doppler(&self) -> Matrix5x4<T> {
        self.0.fixed_rows::<5>(0).into_owned()
    }
    pub fn doppler_row(&self) -> RowVector4<T> {
        self.0.row(5).into_owned()
    }
    /// The first 5 or all 6 rows as a dynamic matrix.
    pub fn rows(&self, with_doppler: bool) -> nalgebra::DMatrix<T> {
        let n = if with_doppler { 6 } else { 5 };
        nalgebra::DMatrix::from_fn(n, self.0.ncols(), |r, c| self.0[(r, c)])
    }
}

impl<T: Real> MeasJacobianLm<T> {
    pub fn non_doppler(&self) -> Matrix5x3<T> {
        self.0.fixed_rows::<5>(0).into_owned()
    }
    pub fn doppler_row(&self) -> RowVector3<T> {
        self.0.row(5).into_owned()
    }
    pub fn rows(&self, with_doppler: bool) -> nalgebra::DMatrix<T> {
        let n = if with_doppler { 6 } else { 5 };
        nalgebra::DMatrix::from_fn(n, self.0.ncols(), |r, c| self.0[(r, c)])
    }
}

/// Gradient of (azimuth, elevation) of a vector w.r.t. the vector.
fn angle_gradients<T: Real>(v: &Vector3<T>) -> Result<Matrix2x3<T>> {
    let rho2 = v.x * v.x + v.y * v.y;
    let rho = rho2.sqrt();
    let n2 = rho2 + v.z * v.z;
    if rho <= T::default_epsilon() * (T::one() + n2.sqrt()) {
        return Err(Error::DegenerateGeometry("direction is vertical; azimuth undefined"));
    }
    Ok(Matrix2x3::new(
        -v.y / rho2,
        v.x / rho2,
        T::zero(),
        -v.z * v.x / (rho * n2),
        -v.z * v.y / (rho * n2),
        rho / n2,
    ))
}

/// Derivatives of the VA incidence point w.r.t. the VA position and the UE
/// position, in that order.
pub fn incidence_jacobian<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue_pos: &Vector3<T>,
) -> Result<(Matrix3<T>, Matrix3<T>)> {
    match landmark.kind {
        LandmarkKind::Sp => Ok((Matrix3::identity(), Matrix3::zeros())),
        LandmarkKind::Bs => Err(Error::InvalidKind(LandmarkKind::Bs)),
        LandmarkKind::Va => {
            let va = landmark.position;
            let (_, t) = va_intersection(&va, bs_pos, ue_pos)?;
            let e = va - bs_pos;
            let ray = va - ue_pos;
            let mid = (va + bs_pos) * lit::<T>(0.5);
            let den = e.dot(&ray);
            // t = e.(mid - ue) / e.(va - ue)
            let dnum_dva = (mid - ue_pos) + e * lit::<T>(0.5);
            let dden_dva = ray + e;
            let dt_dva = (dnum_dva - dden_dva * t) / den;
            let dt_due = e * ((t - T::one()) / den);
            let d_va = Matrix3::identity() * t + ray * dt_dva.transpose();
            let d_ue = Matrix3::identity() * (T::one() - t) + ray * dt_due.transpose();
            Ok((d_va, d_ue))
        }
    }
}

/// Both Jacobians at once; the landmark block is `None` for the BS.
pub fn meas_jacobians<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<(MeasJacobianUe<T>, Option<MeasJacobianLm<T>>)> {
    let p = ue.position();
    let pv = path_vectors(landmark, bs_pos, &p)?;
    let u = pv.arrival;
    let w = pv.departure;
    let un = u.norm();
    let q = u / un;
    let qw = w.normalize();

    // d(arrival)/d(ue), d(arrival)/d(lm), d(departure)/d(ue), d(departure)/d(lm)
    let eye = Matrix3::<T>::identity();
    let (du_dp, du_dl, dw_dp, dw_dl) = match landmark.kind {
        LandmarkKind::Bs => (-eye, Matrix3::zeros(), eye, Matrix3::zeros()),
        _ => {
            let (dinc_dl, dinc_dp) = incidence_jacobian(landmark, bs_pos, &p)?;
            (dinc_dp - eye, dinc_dl, dinc_dp, dinc_dl)
        }
    };

    let los = landmark.kind == LandmarkKind::Bs;
    let range_row = |du: &Matrix3<T>, dw: &Matrix3<T>| -> RowVector3<T> {
        let r = q.transpose() * du;
        if los {
            r
        } else {
            r + qw.transpose() * dw
        }
    };
    let aoa = angle_gradients(&u)?;
    let aod = angle_gradients(&w)?;
    let vel = ue.velocity(speed);
    let dop = vel.dot(&q);
    let dop_grad = ((vel - q * dop) / un).transpose();

    let rows_for = |du: &Matrix3<T>, dw: &Matrix3<T>| -> Matrix6x3<T> {
        let mut m = Matrix6x3::zeros();
        m.set_row(0, &range_row(du, dw));
        m.fixed_rows_mut::<2>(1).copy_from(&(aoa * du));
        m.fixed_rows_mut::<2>(3).copy_from(&(aod * dw));
        m.set_row(5, &(dop_grad * du));
        m
    };

    let wrt_pos = rows_for(&du_dp, &dw_dp);
    let mut a = Matrix6x4::zeros();
    // UE moves in the plane: keep the x and y columns.
    a.fixed_columns_mut::<2>(0).copy_from(&wrt_pos.fixed_columns::<2>(0));
    a[(1, 2)] = -T::one();
    a[(5, 2)] = ue.velocity_perp(speed).dot(&q);
    a[(0, 3)] = T::one();

    let b = (!los).then(|| MeasJacobianLm(rows_for(&du_dl, &dw_dl)));
    Ok((MeasJacobianUe(a), b))
}

pub fn meas_jacobian_ue<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<MeasJacobianUe<T>> {
    meas_jacobians(landmark, bs_pos, ue, speed).map(|(a, _)| a)
}

pub fn meas_jacobian_lm<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<MeasJacobianLm<T>> {
    if landmark.kind == LandmarkKind::Bs {
        return Err(Error::InvalidKind(LandmarkKind::Bs));
    }
    let (_, b) = meas_jacobians(landmark, bs_pos, ue, speed)?;
    Ok(b.expect("non-BS landmark has a map Jacobian"))
}

/// Doppler row w.r.t. the UE written in projection form:
/// `[-(v - d q)_xy / L, v_perp . q, 0]`, where `L` is the distance from the
/// UE to the point that fixes the arrival direction (the VA itself for a
/// reflection, the SP or the BS otherwise).
pub fn doppler_row_ue_closed_form<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<RowVector4<T>> {
    let p = ue.position();
    let pv = path_vectors(landmark, bs_pos, &p)?;
    let q = pv.arrival.normalize();
    let anchor = match landmark.kind {
        LandmarkKind::Bs => *bs_pos,
        _ => landmark.position,
    };
    let dist = (anchor - p).norm();
    let v = ue.velocity(speed);
    let g = (v - q * v.dot(&q)) / dist;
    Ok(RowVector4::new(-g.x, -g.y, ue.velocity_perp(speed).dot(&q), T::zero()))
}

/// Doppler row w.r.t. the landmark: `(d inc / d x_LM)^T (v - d q) / |inc - ue|`.
pub fn doppler_row_lm_closed_form<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<RowVector3<T>> {
    let p = ue.position();
    let pv = path_vectors(landmark, bs_pos, &p)?;
    let (dinc_dl, _) = incidence_jacobian(landmark, bs_pos, &p)?;
    let un = pv.arrival.norm();
    let q = pv.arrival / un;
    let v = ue.velocity(speed);
    let g = dinc_dl.transpose() * ((v - q * v.dot(&q)) / un);
    Ok(g.transpose())
}

fn measurement_array<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
) -> Result<[T; 6]> {
    let z = measure(landmark, bs_pos, ue, speed, true)?;
    Ok([
        z.range,
        z.aoa_az,
        z.aoa_el,
        z.aod_az,
        z.aod_el,
        z.doppler.unwrap_or_else(T::zero),
    ])
}

fn central_difference<T: Real>(plus: &[T; 6], minus: &[T; 6], step: T) -> [T; 6] {
    let mut out = [T::zero(); 6];
    for (i, o) in out.iter_mut().enumerate() {
        let mut diff = plus[i] - minus[i];
        if i == 1 || i == 3 {
            diff = wrap_angle(diff);
        }
        *o = diff / (step + step);
    }
    out
}

/// Central-difference Jacobians `(d/d ue, d/d lm)` of the measurement function.
pub fn finite_difference_jacobians<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
    step: T,
) -> Result<(Matrix6x4<T>, Option<Matrix6x3<T>>)> {
    let mut a = Matrix6x4::zeros();
    let base = ue.to_vector();
    for c in 0..4 {
        let mut hi = base;
        let mut lo = base;
        hi[c] += step;
        lo[c] -= step;
        let zp = measurement_array(landmark, bs_pos, &UeState::from_vector(&hi), speed)?;
        let zm = measurement_array(landmark, bs_pos, &UeState::from_vector(&lo), speed)?;
        let col = central_difference(&zp, &zm, step);
        for r in 0..6 {
            a[(r, c)] = col[r];
        }
    }
    if landmark.kind == LandmarkKind::Bs {
        return Ok((a, None));
    }
    let mut b = Matrix6x3::zeros();
    for c in 0..3 {
        let mut hi = *landmark;
        let mut lo = *landmark;
        hi.position[c] += step;
        lo.position[c] -= step;
        let zp = measurement_array(&hi, bs_pos, ue, speed)?;
        let zm = measurement_array(&lo, bs_pos, ue, speed)?;
        let col = central_difference(&zp, &zm, step);
        for r in 0..6 {
            b[(r, c)] = col[r];
        }
    }
    Ok((a, Some(b)))
}

/// Largest `|analytic - central difference| / max(1, |analytic|)` over every
/// entry of both Jacobians.
pub fn fd_check<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
    step: T,
) -> Result<T> {
    let (a, b) = meas_jacobians(landmark, bs_pos, ue, speed)?;
    let (fa, fb) = finite_difference_jacobians(landmark, bs_pos, ue, speed, step)?;
    let rel = |x: T, y: T| (x - y).abs() / x.abs().max(T::one());
    let mut worst = T::zero();
    for (x, y) in a.0.iter().zip(fa.iter()) {
        worst = worst.max(rel(*x, *y));
    }
    if let (Some(b), Some(fb)) = (b, fb) {
        for (x, y) in b.0.iter().zip(fb.iter()) {
            worst = worst.max(rel(*x, *y));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector4;

    #[test]
    fn los_doppler_row_matches_finite_differences() {
        let bs = Landmark::bs(0.0, 0.0, 0.0);
        let ue = UeState::new(10.0, 0.0, 0.0, 0.0);
        let a = meas_jacobian_ue(&bs, &bs.position, &ue, 1.0).unwrap();
        let (fa, _) = finite_difference_jacobians(&bs, &bs.position, &ue, 1.0, 1e-6).unwrap();
        // Frozen from the central-difference oracle above: the velocity is
        // along q, so only the position component normal to q is zero and
        // the heading entry is v_perp . q = 0.
        let frozen = Vector4::new(fa[(5, 0)], fa[(5, 1)], fa[(5, 2)], fa[(5, 3)]);
        assert_relative_eq!(frozen, Vector4::new(0.0, 0.0, 0.0, 0.0), epsilon = 1e-8);
        assert_relative_eq!(a.doppler_row().transpose(), frozen, epsilon = 1e-8);
    }

    #[test]
    fn bias_column_exact() {
        let scen = crate::geometry::Scenario::<f64>::standard();
        let ue = UeState::new(40.0, 31.0, 2.1, 300.0);
        for lm in scen.landmarks.iter().chain(std::iter::once(&scen.bs)) {
            let a = meas_jacobian_ue(lm, &scen.bs.position, &ue, 22.22).unwrap();
            assert_eq!(a.0[(5, 3)], 0.0);
            assert_eq!(a.0[(0, 3)], 1.0);
            for r in 1..5 {
                assert_eq!(a.0[(r, 3)], 0.0);
            }
        }
    }

    #[test]
    fn doppler_row_vanishes_when_moving_along_arrival() {
        // Planar: BS on z = 0, UE heading straight at it.
        let bs = Landmark::bs(0.0, 0.0, 0.0);
        let ue = UeState::new(30.0, 40.0, (-40.0f64).atan2(-30.0), 0.0);
        let a = meas_jacobian_ue(&bs, &bs.position, &ue, 5.0).unwrap();
        for c in 0..4 {
            assert!(a.0[(5, c)].abs() < 1e-12, "col {c}: {}", a.0[(5, c)]);
        }
    }

    #[test]
    fn closed_form_rows_agree_with_chain_rule() {
        let scen = crate::geometry::Scenario::<f64>::standard();
        for &(x, y, h) in &[(70.0, 5.0, 1.7), (-20.0, 60.0, -2.5), (10.0, -45.0, 0.4)] {
            let ue = UeState::new(x, y, h, 300.0);
            for lm in scen.landmarks.iter().chain(std::iter::once(&scen.bs)) {
                let (a, b) = meas_jacobians(lm, &scen.bs.position, &ue, 22.22).unwrap();
                let cf = doppler_row_ue_closed_form(lm, &scen.bs.position, &ue, 22.22).unwrap();
                assert_relative_eq!(a.doppler_row(), cf, epsilon = 1e-12);
                if let Some(b) = b {
                    let cf = doppler_row_lm_closed_form(lm, &scen.bs.position, &ue, 22.22).unwrap();
                    assert_relative_eq!(b.doppler_row(), cf, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sp_landmark_doppler_row_identity_chain() {
        let sp = Landmark::sp(99.0, 0.0, 10.0);
        let bs = Vector3::new(0.0, 0.0, 40.0);
        let ue = UeState::new(20.0, 30.0, 0.8, 0.0);
        let b = meas_jacobian_lm(&sp, &bs, &ue, 3.0).unwrap();
        let u = sp.position - ue.position();
        let q = u.normalize();
        let v = ue.velocity(3.0);
        let expect = (v - q * v.dot(&q)) / u.norm();
        assert_relative_eq!(b.doppler_row().transpose(), expect, epsilon = 1e-14);
    }

    #[test]
    fn va_far_side_matches_fd() {
        // UE beyond the bisecting plane x = 100, on the VA side.
        let va = Landmark::va(200.0, 0.0, 40.0);
        let bs = Vector3::new(0.0, 0.0, 40.0);
        let ue = UeState::new(150.0, 20.0, 0.3, 10.0);
        let err = fd_check(&va, &bs, &ue, 22.22, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn va_perpendicular_motion_drops_doppler_term() {
        let va = Landmark::va(200.0, 0.0, 40.0);
        let bs = Vector3::new(0.0, 0.0, 40.0);
        // arrival direction has no y component; heading along +y gives d = 0.
        let ue = UeState::new(50.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let z = measure(&va, &bs, &ue, 4.0, true).unwrap();
        assert!(z.doppler.unwrap().abs() < 1e-12);
        let b = meas_jacobian_lm(&va, &bs, &ue, 4.0).unwrap();
        let p = ue.position();
        let (dinc, _) = incidence_jacobian(&va, &bs, &p).unwrap();
        let inc = crate::geometry::incidence_point(&va, &bs, &p).unwrap();
        let expect = dinc.transpose() * ue.velocity(4.0) / (inc - p).norm();
        assert_relative_eq!(b.doppler_row().transpose(), expect, epsilon = 1e-13);
    }

    #[test]
    fn zero_velocity_gives_zero_doppler_rows() {
        let scen = crate::geometry::Scenario::<f64>::standard();
        let ue = UeState::new(-33.0, 12.0, 1.0, 5.0);
        for lm in &scen.landmarks {
            let (a, b) = meas_jacobians(lm, &scen.bs.position, &ue, 0.0).unwrap();
            assert!(a.doppler_row().iter().all(|v| *v == 0.0));
            assert!(b.unwrap().doppler_row().iter().all(|v| *v == 0.0));
            assert!(fd_check(lm, &scen.bs.position, &ue, 0.0, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn heading_only_affects_aoa_azimuth_and_doppler() {
        let scen = crate::geometry::Scenario::<f64>::standard();
        let ue = UeState::new(12.0, -50.0, -1.2, 300.0);
        for lm in &scen.landmarks {
            let (fa, _) = finite_difference_jacobians(lm, &scen.bs.position, &ue, 22.22, 1e-6).unwrap();
            for r in [0, 2, 3, 4] {
                assert!(fa[(r, 2)].abs() < 1e-7, "row {r}");
            }
            assert!((fa[(1, 2)] + 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn bs_has_no_map_jacobian() {
        let bs = Landmark::bs(0.0, 0.0, 40.0);
        let ue = UeState::new(10.0, 0.0, 0.0, 0.0);
        assert!(meas_jacobians(&bs, &bs.position, &ue, 1.0).unwrap().1.is_none());
        assert!(matches!(
            meas_jacobian_lm(&bs, &bs.position, &ue, 1.0),
            Err(Error::InvalidKind(_))
        ));
    }
}
