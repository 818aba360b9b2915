//! Constant turn-rate UE motion with known speed and turn rate.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UeState;
use crate::scalar::{lit, Real};

/// Turn rates below this are integrated as straight-line motion.
const STRAIGHT_TURN_RATE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct MotionConfig<T: Real> {
    pub speed: T,
    pub turn_rate: T,
    pub period: T,
    /// Process noise covariance over (x, y, heading, bias).
    pub process_noise: Matrix4<T>,
}

impl<T: Real> MotionConfig<T> {
    /// v = 22.22 m/s, omega = pi/10 rad/s, T = 0.5 s,
    /// Q = diag(0.2^2, 0.2^2, 0.001^2, 0.2^2).
    pub fn standard() -> Self {
        Self {
            speed: lit(22.22),
            turn_rate: T::pi() / lit(10.0),
            period: lit(0.5),
            process_noise: Matrix4::from_diagonal(&Vector4::new(
                lit(0.04),
                lit(0.04),
                lit(1e-6),
                lit(0.04),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > T::zero()) {
            return Err(Error::Config("motion period must be positive".into()));
        }
        let q = &self.process_noise;
        if (q - q.transpose()).abs().max() > lit::<T>(1e-12) * (T::one() + q.abs().max()) {
            return Err(Error::Config("process noise must be symmetric".into()));
        }
        let eig = q.symmetric_eigenvalues();
        if eig.iter().any(|e| *e < -lit::<T>(1e-12)) {
            return Err(Error::Config("process noise must be positive semidefinite".into()));
        }
        Ok(())
    }

    /// Chord length travelled in one period and the mid-step heading offset.
    fn chord(&self) -> (T, T) {
        let half = self.turn_rate * self.period * lit(0.5);
        let chord = if self.turn_rate.abs() < lit(STRAIGHT_TURN_RATE) {
            self.speed * self.period
        } else {
            lit::<T>(2.0) * self.speed / self.turn_rate * half.sin()
        };
        (chord, half)
    }
}

/// Noiseless one-step transition.
pub fn propagate<T: Real>(ue: &UeState<T>, cfg: &MotionConfig<T>) -> UeState<T> {
    let (chord, half) = cfg.chord();
    let dir = ue.heading + half;
    UeState::new(
        ue.x + chord * dir.cos(),
        ue.y + chord * dir.sin(),
        ue.heading + cfg.turn_rate * cfg.period,
        ue.clock_bias,
    )
}

/// Jacobian of [`propagate`] w.r.t. (x, y, heading, bias).
pub fn transition_jacobian<T: Real>(ue: &UeState<T>, cfg: &MotionConfig<T>) -> Matrix4<T> {
    let (chord, half) = cfg.chord();
    let dir = ue.heading + half;
    let mut f = Matrix4::identity();
    f[(0, 2)] = -chord * dir.sin();
    f[(1, 2)] = chord * dir.cos();
    f
}

/// Draws `N(0, cov)` through a Cholesky factor (or the eigen-decomposition
/// for singular covariances).
pub fn sample_gaussian4<R: Rng + ?Sized>(cov: &Matrix4<f64>, rng: &mut R) -> Vector4<f64> {
    let z = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    match cov.cholesky() {
        Some(c) => c.l() * z,
        None => {
            let eig = cov.symmetric_eigen();
            let s = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
            eig.eigenvectors * Matrix4::from_diagonal(&s) * z
        }
    }
}

/// `steps` successive states after `init` (the initial state itself is not
/// included). With `noise`, each step adds a `N(0, Q)` draw.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    init: &UeState<f64>,
    cfg: &MotionConfig<f64>,
    steps: usize,
    noise: bool,
    rng: &mut R,
) -> Vec<UeState<f64>> {
    let mut out = Vec::with_capacity(steps);
    let mut s = *init;
    for _ in 0..steps {
        let mut next = propagate(&s, cfg).to_vector();
        if noise {
            next += sample_gaussian4(&cfg.process_noise, rng);
        }
        s = UeState::from_vector(&next);
        out.push(s);
    }
    out
}

/// Noiseless trajectory, generic over the scalar.
pub fn nominal_trajectory<T: Real>(init: &UeState<T>, cfg: &MotionConfig<T>, steps: usize) -> Vec<UeState<T>> {
    std::iter::successors(Some(*init), |s| Some(propagate(s, cfg)))
        .skip(1)
        .take(steps)
        .collect()
}
