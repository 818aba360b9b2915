//! Bistatic path geometry: maps a UE state and a landmark to the channel
//! parameters of the path BS -> landmark -> UE, and back again for
//! landmark initialization.
//!
//! Conventions:
//! - delay is carried as pseudo-range in meters, clock bias included;
//! - AOA is expressed in the UE body frame (azimuth rotated by `-heading`),
//!   AOD in the global frame;
//! - azimuth = `atan2(y, x)`, elevation = `asin(z / |v|)`;
//! - Doppler is the projection of the UE velocity onto the arrival direction
//!   (m/s), positive while the UE closes in on the landmark.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, wrap_angle, Real};

/// Planar UE pose plus clock bias (bias in meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeState<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
    pub clock_bias: T,
}

impl<T: Real> UeState<T> {
    pub fn new(x: T, y: T, heading: T, clock_bias: T) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
            clock_bias,
        }
    }

    /// 3D position; the UE moves on the `z = 0` plane.
    pub fn position(&self) -> Vector3<T> {
        Vector3::new(self.x, self.y, T::zero())
    }

    /// Velocity vector for a known scalar speed.
    pub fn velocity(&self, speed: T) -> Vector3<T> {
        Vector3::new(
            speed * self.heading.cos(),
            speed * self.heading.sin(),
            T::zero(),
        )
    }

    /// Velocity rotated by +90 degrees in the plane.
    pub fn velocity_perp(&self, speed: T) -> Vector3<T> {
        Vector3::new(
            -speed * self.heading.sin(),
            speed * self.heading.cos(),
            T::zero(),
        )
    }

    pub fn to_vector(&self) -> nalgebra::Vector4<T> {
        nalgebra::Vector4::new(self.x, self.y, self.heading, self.clock_bias)
    }

    /// Builds a state from `[x, y, heading, bias]`, wrapping the heading.
    pub fn from_vector(v: &nalgebra::Vector4<T>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.clock_bias.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LandmarkKind {
    Bs,
    Va,
    Sp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct Landmark<T: Real> {
    pub position: Vector3<T>,
    pub kind: LandmarkKind,
}

impl<T: Real> Landmark<T> {
    pub fn new(position: Vector3<T>, kind: LandmarkKind) -> Self {
        Self { position, kind }
    }
    pub fn bs(x: T, y: T, z: T) -> Self {
        Self::new(Vector3::new(x, y, z), LandmarkKind::Bs)
    }
    pub fn va(x: T, y: T, z: T) -> Self {
        Self::new(Vector3::new(x, y, z), LandmarkKind::Va)
    }
    pub fn sp(x: T, y: T, z: T) -> Self {
        Self::new(Vector3::new(x, y, z), LandmarkKind::Sp)
    }
}

/// One known BS plus the unknown map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct Scenario<T: Real> {
    pub bs: Landmark<T>,
    pub landmarks: Vec<Landmark<T>>,
    pub speed_of_light: T,
}

impl<T: Real> Scenario<T> {
    /// BS at (0, 0, 40); VAs at (+-200, 0, 40), (0, +-200, 40);
    /// SPs at (+-99, 0, 10), (0, +-99, 10).
    pub fn standard() -> Self {
        let l = lit::<T>;
        let mut landmarks = Vec::with_capacity(8);
        for (x, y) in [(200.0, 0.0), (-200.0, 0.0), (0.0, 200.0), (0.0, -200.0)] {
            landmarks.push(Landmark::va(l(x), l(y), l(40.0)));
        }
        for (x, y) in [(99.0, 0.0), (-99.0, 0.0), (0.0, 99.0), (0.0, -99.0)] {
            landmarks.push(Landmark::sp(l(x), l(y), l(10.0)));
        }
        Self {
            bs: Landmark::bs(T::zero(), T::zero(), l(40.0)),
            landmarks,
            speed_of_light: l(299_792_458.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs.kind != LandmarkKind::Bs {
            return Err(Error::Config("scenario BS must have kind BS".into()));
        }
        for (i, lm) in self.landmarks.iter().enumerate() {
            if lm.kind == LandmarkKind::Bs {
                return Err(Error::Config("only one BS is allowed".into()));
            }
            if !lm.position.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("landmark {i} is not finite")));
            }
            if (lm.position - self.bs.position).norm() == T::zero() {
                return Err(Error::Config(format!("landmark {i} coincides with the BS")));
            }
            for (j, other) in self.landmarks.iter().enumerate().skip(i + 1) {
                if lm.position == other.position {
                    return Err(Error::Config(format!("landmarks {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn landmarks_of(&self, kind: LandmarkKind) -> impl Iterator<Item = &Landmark<T>> {
        self.landmarks.iter().filter(move |l| l.kind == kind)
    }
}

/// Channel parameters of a single path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement<T> {
    pub range: T,
    pub aoa_az: T,
    pub aoa_el: T,
    pub aod_az: T,
    pub aod_el: T,
    pub doppler: Option<T>,
}

impl<T: Real> Measurement<T> {
    pub fn dim(&self) -> usize {
        if self.doppler.is_some() {
            6
        } else {
            5
        }
    }

    /// `[range, aoa_az, aoa_el, aod_az, aod_el (, doppler)]`.
    pub fn to_vector(&self) -> DVector<T> {
        let mut v = vec![self.range, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el];
        if let Some(d) = self.doppler {
            v.push(d);
        }
        DVector::from_vec(v)
    }

    /// Inverse of [`Measurement::to_vector`]; azimuths are wrapped.
    pub fn from_slice(v: &[T]) -> Result<Self> {
        match v.len() {
            5 | 6 => Ok(Self {
                range: v[0],
                aoa_az: wrap_angle(v[1]),
                aoa_el: v[2],
                aod_az: wrap_angle(v[3]),
                aod_el: v[4],
                doppler: v.get(5).copied(),
            }),
            n => Err(Error::LengthMismatch(n, 6)),
        }
    }

    pub fn without_doppler(mut self) -> Self {
        self.doppler = None;
        self
    }
}

/// Indices of the azimuth components inside a measurement vector.
pub const AZIMUTH_ROWS: [usize; 2] = [1, 3];

pub fn azimuth<T: Real>(v: &Vector3<T>) -> T {
    v.y.atan2(v.x)
}

pub fn elevation<T: Real>(v: &Vector3<T>) -> T {
    let s = v.z / v.norm();
    s.clamp(-T::one(), T::one()).asin()
}

/// Unit vector from global azimuth/elevation.
pub fn direction<T: Real>(az: T, el: T) -> Vector3<T> {
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

fn degenerate_eps<T: Real>() -> T {
    T::default_epsilon().sqrt() * lit(1e-3)
}

/// Point where the path from the BS touches the landmark.
///
/// For an SP this is the SP itself. For a VA the reflecting surface is the
/// plane perpendicularly bisecting BS -> VA, and the point is where the line
/// UE -> VA crosses it.
pub fn incidence_point<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue_pos: &Vector3<T>,
) -> Result<Vector3<T>> {
    match landmark.kind {
        LandmarkKind::Sp => Ok(landmark.position),
        LandmarkKind::Bs => Err(Error::InvalidKind(LandmarkKind::Bs)),
        LandmarkKind::Va => Ok(va_intersection(&landmark.position, bs_pos, ue_pos)?.0),
    }
}

/// Returns the incidence point and the line parameter `t` such that
/// `inc = ue + t (va - ue)`.
pub(crate) fn va_intersection<T: Real>(
    va: &Vector3<T>,
    bs: &Vector3<T>,
    ue: &Vector3<T>,
) -> Result<(Vector3<T>, T)> {
    let normal = va - bs;
    let ray = va - ue;
    let eps = degenerate_eps::<T>();
    if ray.norm() <= eps * (T::one() + va.norm()) {
        return Err(Error::DegenerateGeometry("UE coincides with the VA"));
    }
    if normal.norm() <= eps * (T::one() + va.norm()) {
        return Err(Error::DegenerateGeometry("VA coincides with the BS"));
    }
    let den = normal.dot(&ray);
    if den.abs() <= eps * normal.norm() * ray.norm() {
        return Err(Error::DegenerateGeometry("UE->VA line parallel to reflecting plane"));
    }
    let mid = (va + bs) * lit::<T>(0.5);
    let t = normal.dot(&(mid - ue)) / den;
    Ok((ue + ray * t, t))
}

/// Arrival vector (UE -> incidence point), departure vector
/// (BS -> incidence point, or BS -> UE for LOS) and path length.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PathVectors<T: Real> {
    pub arrival: Vector3<T>,
    pub departure: Vector3<T>,
    pub length: T,
}

pub(crate) fn path_vectors<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue_pos: &Vector3<T>,
) -> Result<PathVectors<T>> {
    let eps = degenerate_eps::<T>();
    let pv = match landmark.kind {
        LandmarkKind::Bs => {
            let arrival = bs_pos - ue_pos;
            PathVectors {
                arrival,
                departure: -arrival,
                length: arrival.norm(),
            }
        }
        _ => {
            let inc = incidence_point(landmark, bs_pos, ue_pos)?;
            let arrival = inc - ue_pos;
            let departure = inc - bs_pos;
            if departure.norm() <= eps * (T::one() + bs_pos.norm()) {
                return Err(Error::DegenerateGeometry("incidence point at the BS"));
            }
            PathVectors {
                arrival,
                departure,
                length: arrival.norm() + departure.norm(),
            }
        }
    };
    if pv.arrival.norm() <= eps * (T::one() + ue_pos.norm()) {
        return Err(Error::DegenerateGeometry("UE at the incidence point"));
    }
    Ok(pv)
}

/// Noiseless channel parameters of the path through `landmark`.
pub fn measure<T: Real>(
    landmark: &Landmark<T>,
    bs_pos: &Vector3<T>,
    ue: &UeState<T>,
    speed: T,
    with_doppler: bool,
) -> Result<Measurement<T>> {
    let pv = path_vectors(landmark, bs_pos, &ue.position())?;
    let q = pv.arrival.normalize();
    Ok(Measurement {
        range: pv.length + ue.clock_bias,
        aoa_az: wrap_angle(azimuth(&pv.arrival) - ue.heading),
        aoa_el: elevation(&pv.arrival),
        aod_az: azimuth(&pv.departure),
        aod_el: elevation(&pv.departure),
        doppler: with_doppler.then(|| ue.velocity(speed).dot(&q)),
    })
}

/// Landmark position implied by a measurement, given the UE state.
///
/// The AOA fixes the direction from the UE; the bias-corrected range fixes
/// the distance along it (VA) or the two-leg ellipse (SP).
pub fn birth_position<T: Real>(
    z: &Measurement<T>,
    ue: &UeState<T>,
    bs_pos: &Vector3<T>,
    kind: LandmarkKind,
) -> Result<Vector3<T>> {
    let q = direction(z.aoa_az + ue.heading, z.aoa_el);
    let ue_pos = ue.position();
    let r_t = z.range - ue.clock_bias;
    match kind {
        LandmarkKind::Va => {
            if r_t <= T::zero() {
                return Err(Error::InfeasibleBirth("non-positive path length"));
            }
            Ok(ue_pos + q * r_t)
        }
        LandmarkKind::Sp => {
            let d = ue_pos - bs_pos;
            let dn = d.norm();
            if r_t <= dn {
                return Err(Error::InfeasibleBirth("path shorter than the direct distance"));
            }
            let r = (r_t * r_t - dn * dn) / (lit::<T>(2.0) * (r_t + q.dot(&d)));
            if !(r > T::zero()) || !r.is_finite() {
                return Err(Error::InfeasibleBirth("non-positive scatterer distance"));
            }
            Ok(ue_pos + q * r)
        }
        LandmarkKind::Bs => Err(Error::InvalidKind(LandmarkKind::Bs)),
    }
}
