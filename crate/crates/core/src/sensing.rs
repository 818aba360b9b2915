//! Measurement-scan synthesis: noisy detections, misdetections and clutter.

use nalgebra::{DMatrix, Matrix5, Matrix6, Vector5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{measure, Measurement, Scenario, UeState};
use crate::scalar::{lit, wrap_angle, Real};

/// Measurement noise `blkdiag(R_tilde, sigma_d^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct MeasurementNoise<T: Real> {
    /// Covariance of (range, aoa az, aoa el, aod az, aod el).
    pub non_doppler: Matrix5<T>,
    /// Doppler standard deviation, m/s.
    pub sigma_d: T,
}

impl<T: Real> MeasurementNoise<T> {
    /// `R = blkdiag(1e-2 m^2, 2.5e-3 I_4 rad^2, sigma_d^2)`.
    pub fn standard(sigma_d: T) -> Self {
        let d = Vector5::new(lit(1e-2), lit(2.5e-3), lit(2.5e-3), lit(2.5e-3), lit(2.5e-3));
        Self {
            non_doppler: Matrix5::from_diagonal(&d),
            sigma_d,
        }
    }

    pub fn full(&self) -> Matrix6<T> {
        let mut r = Matrix6::zeros();
        r.fixed_view_mut::<5, 5>(0, 0).copy_from(&self.non_doppler);
        r[(5, 5)] = self.sigma_d * self.sigma_d;
        r
    }

    /// 5x5 or 6x6 covariance depending on whether Doppler is used.
    pub fn covariance(&self, with_doppler: bool) -> DMatrix<T> {
        let n = if with_doppler { 6 } else { 5 };
        self.full().view((0, 0), (n, n)).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.non_doppler;
        if (r - r.transpose()).abs().max() > lit::<T>(1e-12) * (T::one() + r.abs().max()) {
            return Err(Error::Config("measurement noise must be symmetric".into()));
        }
        if r.symmetric_eigenvalues().iter().any(|e| *e <= T::zero()) {
            return Err(Error::Config("measurement noise must be positive definite".into()));
        }
        if !(self.sigma_d > T::zero()) {
            return Err(Error::Config("sigma_d must be positive".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box clutter is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterRegion {
    pub range_m: [f64; 2],
    pub aoa_az_rad: [f64; 2],
    pub aoa_el_rad: [f64; 2],
    pub aod_az_rad: [f64; 2],
    pub aod_el_rad: [f64; 2],
    pub doppler_mps: [f64; 2],
}

impl ClutterRegion {
    pub fn standard(speed: f64) -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            range_m: [0.0, 600.0],
            aoa_az_rad: [-PI, PI],
            aoa_el_rad: [-FRAC_PI_2, FRAC_PI_2],
            aod_az_rad: [-PI, PI],
            aod_el_rad: [-FRAC_PI_2, FRAC_PI_2],
            doppler_mps: [-speed, speed],
        }
    }

    fn bounds(&self) -> [[f64; 2]; 6] {
        [
            self.range_m,
            self.aoa_az_rad,
            self.aoa_el_rad,
            self.aod_az_rad,
            self.aod_el_rad,
            self.doppler_mps,
        ]
    }

    /// Lebesgue measure of the box over the first 5 or all 6 dimensions.
    pub fn volume(&self, with_doppler: bool) -> f64 {
        let n = if with_doppler { 6 } else { 5 };
        self.bounds()[..n].iter().map(|[lo, hi]| hi - lo).product()
    }

    fn validate(&self) -> Result<()> {
        if self.bounds().iter().any(|[lo, hi]| !(hi > lo)) {
            return Err(Error::Config("clutter region bounds must be increasing".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub noise: MeasurementNoise<f64>,
    pub detection_prob: f64,
    /// Expected clutter measurements per scan.
    pub clutter_rate: f64,
    pub clutter_region: ClutterRegion,
    pub with_doppler: bool,
}

impl SensorConfig {
    pub fn standard(sigma_d: f64, speed: f64) -> Self {
        Self {
            noise: MeasurementNoise::standard(sigma_d),
            detection_prob: 0.9,
            clutter_rate: 1.0,
            clutter_region: ClutterRegion::standard(speed),
            with_doppler: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.clutter_region.validate()?;
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(Error::Config("detection probability must lie in [0, 1]".into()));
        }
        if !(self.clutter_rate >= 0.0) {
            return Err(Error::Config("clutter rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn meas_dim(&self) -> usize {
        if self.with_doppler {
            6
        } else {
            5
        }
    }

    /// Clutter intensity (expected count per unit measurement volume).
    pub fn clutter_density(&self) -> f64 {
        self.clutter_rate / self.clutter_region.volume(self.with_doppler)
    }
}

/// Where a measurement really came from. Simulation-only ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Bs,
    /// Index into `Scenario::landmarks`.
    Landmark(usize),
    Clutter,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub measurements: Vec<Measurement<f64>>,
    /// Hidden labels, aligned with `measurements`.
    pub truth: Vec<Source>,
}

impl Scan {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }
    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }
}

/// Synthesizes one scan at `ue`.
///
/// Every landmark (the BS included) is detected independently with
/// probability `p_D`; clutter count is Poisson. Six noise components and the
/// detection draw are consumed for each landmark regardless of the outcome
/// and of the Doppler flag, so runs that differ only in those settings see
/// the same noise realizations.
pub fn generate_scan<R: Rng + ?Sized>(
    scenario: &Scenario<f64>,
    ue: &UeState<f64>,
    speed: f64,
    cfg: &SensorConfig,
    rng: &mut R,
) -> Result<Scan> {
    let chol = cfg
        .noise
        .full()
        .cholesky()
        .ok_or_else(|| Error::Config("measurement noise is not positive definite".into()))?;
    let l = chol.l();
    let bs_pos = scenario.bs.position;
    let mut items: Vec<(Measurement<f64>, Source)> = Vec::new();

    let sources = std::iter::once((Source::Bs, &scenario.bs))
        .chain(scenario.landmarks.iter().enumerate().map(|(i, lm)| (Source::Landmark(i), lm)));
    for (src, lm) in sources {
        let detected = rng.random::<f64>() < cfg.detection_prob;
        let eps = l * nalgebra::Vector6::from_fn(|_, _| StandardNormal.sample(rng));
        if !detected {
            continue;
        }
        let clean = measure(lm, &bs_pos, ue, speed, true)?;
        let z = Measurement {
            range: clean.range + eps[0],
            aoa_az: wrap_angle(clean.aoa_az + eps[1]),
            aoa_el: clean.aoa_el + eps[2],
            aod_az: wrap_angle(clean.aod_az + eps[3]),
            aod_el: clean.aod_el + eps[4],
            doppler: cfg.with_doppler.then(|| clean.doppler.unwrap_or(0.0) + eps[5]),
        };
        items.push((z, src));
    }

    let n_clutter = if cfg.clutter_rate > 0.0 {
        Poisson::new(cfg.clutter_rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    let b = cfg.clutter_region.bounds();
    for _ in 0..n_clutter {
        let mut v = [0.0; 6];
        for (x, [lo, hi]) in v.iter_mut().zip(b) {
            *x = rng.random_range(lo..hi);
        }
        let mut z = Measurement::from_slice(&v)?;
        if !cfg.with_doppler {
            z.doppler = None;
        }
        items.push((z, Source::Clutter));
    }

    items.shuffle(rng);
    let (measurements, truth) = items.into_iter().unzip();
    Ok(Scan { measurements, truth })
}

pub fn generate_scan_seeded(
    scenario: &Scenario<f64>,
    ue: &UeState<f64>,
    speed: f64,
    cfg: &SensorConfig,
    seed: u64,
) -> Result<Scan> {
    generate_scan(scenario, ue, speed, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}
