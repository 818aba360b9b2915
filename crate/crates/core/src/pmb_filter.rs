//! Extended-Kalman Poisson multi-Bernoulli (EK-PMB) SLAM filter.
//!
//! The belief holds one Gaussian for the UE state, a uniform Poisson
//! intensity for landmarks that have never been detected and a list of
//! Bernoulli components for the rest. An update scores the `gamma` most
//! likely data associations (DAs), runs one joint linearized update of the
//! UE and the associated landmarks per DA, and merges the outcomes back
//! into a single multi-Bernoulli by moment matching.
//!
//! The BS is a known landmark: it is scored and used like any other path
//! but owns no Bernoulli.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::assignment::{kbest, CostMatrix};
use crate::dynamics::{propagate, transition_jacobian, MotionConfig};
use crate::error::{Error, Result};
use crate::geometry::{birth_position, measure, Landmark, LandmarkKind, Measurement, UeState, AZIMUTH_ROWS};
use crate::jacobians::meas_jacobians;
use crate::sensing::{Scan, SensorConfig, Source};
use crate::scalar::wrap_angle;

/// Kinds a Bernoulli can take, in `kind_probs` order.
pub const KINDS: [LandmarkKind; 2] = [LandmarkKind::Va, LandmarkKind::Sp];

/// Relative tolerance for negative eigenvalues before covariance repair
/// gives up.
const PSD_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity<const N: usize> {
    pub mean: SVector<f64, N>,
    pub cov: SMatrix<f64, N, N>,
}

pub type UeDensity = GaussianDensity<4>;
pub type LandmarkDensity = GaussianDensity<3>;

type BernoulliPart = (f64, [f64; 2], [LandmarkDensity; 2]);

impl<const N: usize> GaussianDensity<N> {
    pub fn new(mean: SVector<f64, N>, cov: SMatrix<f64, N, N>) -> Self {
        Self { mean, cov }
    }
}

/// Symmetrizes `cov` and clamps small negative eigenvalues to zero.
pub fn repair_covariance<const N: usize>(cov: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>> {
    let sym = (cov + cov.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite covariance".into()));
    }
    if sym.cholesky().is_some() {
        return Ok(sym);
    }
    let eig = dyn_block(&sym).symmetric_eigen();
    let scale = sym.trace().abs().max(f64::MIN_POSITIVE);
    let lo = eig.eigenvalues.min();
    if lo < -PSD_TOLERANCE * scale {
        return Err(Error::NumericalFailure(format!(
            "covariance has eigenvalue {lo:e} (trace {scale:e})"
        )));
    }
    let clamped = eig.eigenvalues.map(|e| e.max(0.0));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    let fixed = SMatrix::<f64, N, N>::from_iterator(fixed.iter().copied());
    Ok((fixed + fixed.transpose()) * 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bernoulli {
    pub existence: f64,
    /// Probabilities of [`KINDS`].
    pub kind_probs: [f64; 2],
    /// Position density conditioned on each kind.
    pub densities: [LandmarkDensity; 2],
    /// Ground-truth label of the measurement that spawned this component.
    /// Carried for diagnostics only; the filter never reads it.
    pub tag: Option<Source>,
}

impl Bernoulli {
    pub fn most_likely_kind(&self) -> usize {
        if self.kind_probs[1] > self.kind_probs[0] {
            1
        } else {
            0
        }
    }
}

/// Uniform birth intensity over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirthModel {
    pub region_min_m: [f64; 3],
    pub region_max_m: [f64; 3],
    /// Expected number of VAs at k = 0.
    pub expected_va: f64,
    /// Expected number of SPs at k = 0.
    pub expected_sp: f64,
}

impl BirthModel {
    /// x, y in [-300, 300] m, z in [0, 60] m, four landmarks of each kind.
    pub fn standard() -> Self {
        Self {
            region_min_m: [-300.0, -300.0, 0.0],
            region_max_m: [300.0, 300.0, 60.0],
            expected_va: 4.0,
            expected_sp: 4.0,
        }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| self.region_max_m[i] - self.region_min_m[i]).product()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.region_min_m[i] && p[i] <= self.region_max_m[i])
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|i| !(self.region_max_m[i] > self.region_min_m[i])) {
            return Err(Error::Config("birth region bounds must be increasing".into()));
        }
        if !(self.expected_va >= 0.0 && self.expected_sp >= 0.0) {
            return Err(Error::Config("expected landmark counts must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Number of DAs kept per update.
    pub gamma: usize,
    pub prune_r: f64,
    /// Mahalanobis gate radius on the innovation.
    pub gate: f64,
    pub max_components: usize,
    /// Existence threshold for reported landmarks.
    pub report_r: f64,
    pub birth: BirthModel,
    pub sensor: SensorConfig,
    pub motion: MotionConfig<f64>,
    pub bs_position: Vector3<f64>,
}

impl FilterConfig {
    pub fn standard(sigma_d: f64, with_doppler: bool) -> Self {
        let motion = MotionConfig::standard();
        let mut sensor = SensorConfig::standard(sigma_d, motion.speed);
        sensor.with_doppler = with_doppler;
        Self {
            gamma: 10,
            prune_r: 1e-4,
            gate: 5.0,
            max_components: 50,
            report_r: 0.5,
            birth: BirthModel::standard(),
            sensor,
            motion,
            bs_position: Vector3::new(0.0, 0.0, 40.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1 {
            return Err(Error::Config("gamma must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.prune_r) || !(0.0..=1.0).contains(&self.report_r) {
            return Err(Error::Config("existence thresholds must lie in [0, 1]".into()));
        }
        if !(self.gate > 0.0) || self.max_components == 0 {
            return Err(Error::Config("gate and component cap must be positive".into()));
        }
        self.birth.validate()?;
        self.sensor.validate()?;
        self.motion.validate()
    }

    fn bs(&self) -> Landmark<f64> {
        Landmark::new(self.bs_position, LandmarkKind::Bs)
    }
}

/// Posterior in Poisson multi-Bernoulli form (a single global hypothesis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmbBelief {
    pub ue: UeDensity,
    /// Expected number of undetected landmarks per kind, spread uniformly
    /// over the birth region.
    pub undetected: [f64; 2],
    pub bernoullis: Vec<Bernoulli>,
}

/// One retained DA. `row_to_col[0]` is the BS, `row_to_col[i + 1]` the
/// Bernoulli `i`; a column `>= measurement_count` means "not detected".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataAssociation {
    pub row_to_col: Vec<usize>,
    pub cost: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub associations: Vec<DataAssociation>,
    pub measurement_count: usize,
    /// Tags of the rows at the time of the update (BS first).
    pub row_tags: Vec<Option<Source>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub position: Vector3<f64>,
    pub kind: LandmarkKind,
    pub existence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub ue: UeState<f64>,
    pub map: Vec<MapEstimate>,
}

impl Estimate {
    pub fn positions_of(&self, kind: LandmarkKind) -> Vec<Vector3<f64>> {
        self.map.iter().filter(|m| m.kind == kind).map(|m| m.position).collect()
    }
}

/// Predicted measurement and Jacobians at a linearization point.
struct Linearized {
    h: DVector<f64>,
    a: DMatrix<f64>,
    b: Option<DMatrix<f64>>,
}

fn linearize(lm: &Landmark<f64>, bs: &Vector3<f64>, ue: &UeState<f64>, speed: f64, dim: usize) -> Result<Linearized> {
    let z = measure(lm, bs, ue, speed, true)?;
    let (a, b) = meas_jacobians(lm, bs, ue, speed)?;
    let h = z.to_vector().rows(0, dim).into_owned();
    let a = DMatrix::from_fn(dim, 4, |r, c| a.0[(r, c)]);
    let b = b.map(|b| DMatrix::from_fn(dim, 3, |r, c| b.0[(r, c)]));
    Ok(Linearized { h, a, b })
}

fn innovation(z: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    let mut nu = z - h;
    for r in AZIMUTH_ROWS {
        nu[r] = wrap_angle(nu[r]);
    }
    nu
}

fn dyn_block<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_fn(R, C, |r, c| m[(r, c)])
}

/// Log-density of `nu` under `N(0, s)` and the squared Mahalanobis norm.
fn log_gauss(nu: &DVector<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> (f64, f64) {
    let maha = nu.dot(&chol.solve(nu));
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let d = nu.len() as f64;
    (-0.5 * (maha + log_det + d * (2.0 * PI).ln()), maha)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Detection of one component (kind-resolved) by one measurement.
#[derive(Clone)]
struct Detection {
    log_lik: f64,
    kind_post: [f64; 2],
    /// Marginal EKF posterior per kind, UE treated as a noise term.
    marginal: [Option<LandmarkDensity>; 2],
}

/// Kind index, linearization, Cholesky factor of the innovation covariance
/// and its dense form.
type KindModel = (usize, Linearized, nalgebra::Cholesky<f64, nalgebra::Dyn>, DMatrix<f64>);

/// A component's prediction for each kind, shared across measurements.
struct RowModel {
    kinds: Vec<KindModel>,
}

struct Birth {
    log_rho: [f64; 2],
    densities: [Option<LandmarkDensity>; 2],
}

impl PmbBelief {
    pub fn new(ue_mean: &UeState<f64>, ue_cov: Matrix4<f64>, birth: &BirthModel) -> Self {
        Self {
            ue: GaussianDensity::new(ue_mean.to_vector(), ue_cov),
            undetected: [birth.expected_va, birth.expected_sp],
            bernoullis: Vec::new(),
        }
    }

    pub fn ue_state(&self) -> UeState<f64> {
        UeState::from_vector(&self.ue.mean)
    }

    /// Propagates the UE density through the motion model; the map is static.
    pub fn predict(&mut self, motion: &MotionConfig<f64>) {
        let ue = self.ue_state();
        let f = transition_jacobian(&ue, motion);
        self.ue.mean = propagate(&ue, motion).to_vector();
        let p = f * self.ue.cov * f.transpose() + motion.process_noise;
        self.ue.cov = (p + p.transpose()) * 0.5;
    }

    /// UE mean plus every component whose existence exceeds `report_r`,
    /// reported with its most likely kind.
    pub fn estimate(&self, report_r: f64) -> Estimate {
        let map = self
            .bernoullis
            .iter()
            .filter(|b| b.existence > report_r)
            .map(|b| {
                let k = b.most_likely_kind();
                MapEstimate {
                    position: b.densities[k].mean,
                    kind: KINDS[k],
                    existence: b.existence,
                }
            })
            .collect();
        Estimate { ue: self.ue_state(), map }
    }

    fn measurement_vectors(scan: &Scan, dim: usize) -> Result<Vec<DVector<f64>>> {
        scan.measurements
            .iter()
            .map(|z: &Measurement<f64>| {
                if z.dim() < dim {
                    return Err(Error::LengthMismatch(z.dim(), dim));
                }
                Ok(z.to_vector().rows(0, dim).into_owned())
            })
            .collect()
    }

    fn row_model(&self, row: usize, cfg: &FilterConfig, r_cov: &DMatrix<f64>) -> RowModel {
        let ue = self.ue_state();
        let dim = r_cov.nrows();
        let p_ue = dyn_block(&self.ue.cov);
        let bs = cfg.bs_position;
        let speed = cfg.motion.speed;
        let mut kinds = Vec::new();
        if row == 0 {
            if let Ok(lin) = linearize(&cfg.bs(), &bs, &ue, speed, dim) {
                let s = &lin.a * &p_ue * lin.a.transpose() + r_cov;
                if let Some(ch) = s.clone().cholesky() {
                    kinds.push((0, lin, ch, s));
                }
            }
            return RowModel { kinds };
        }
        let ber = &self.bernoullis[row - 1];
        for (k, kind) in KINDS.iter().enumerate() {
            if ber.kind_probs[k] <= 0.0 {
                continue;
            }
            let dens = &ber.densities[k];
            let Ok(lin) = linearize(&Landmark::new(dens.mean, *kind), &bs, &ue, speed, dim) else {
                continue;
            };
            let b = lin.b.as_ref().expect("landmark rows carry a map Jacobian");
            let s = &lin.a * &p_ue * lin.a.transpose() + b * dyn_block(&dens.cov) * b.transpose() + r_cov;
            if let Some(ch) = s.clone().cholesky() {
                kinds.push((k, lin, ch, s));
            }
        }
        RowModel { kinds }
    }

    fn detection(&self, row: usize, model: &RowModel, z: &DVector<f64>, cfg: &FilterConfig) -> Option<Detection> {
        let p_d = cfg.sensor.detection_prob;
        let gate2 = cfg.gate * cfg.gate;
        let (r, probs) = if row == 0 {
            (1.0, [1.0, 0.0])
        } else {
            let b = &self.bernoullis[row - 1];
            (b.existence, b.kind_probs)
        };
        let mut terms = [f64::NEG_INFINITY; 2];
        let mut marginal = [None, None];
        for (k, lin, chol, s) in &model.kinds {
            let nu = innovation(z, &lin.h);
            let (lp, maha) = log_gauss(&nu, chol);
            if maha > gate2 {
                continue;
            }
            terms[*k] = probs[*k].ln() + lp;
            if let Some(b) = &lin.b {
                let dens = &self.bernoullis[row - 1].densities[*k];
                let pb = dyn_block(&dens.cov) * b.transpose();
                let gain = chol.solve(&pb.transpose()).transpose();
                let mean = dens.mean + Vector3::from_iterator((&gain * &nu).iter().copied());
                let cov = dens.cov - SMatrix::<f64, 3, 3>::from_iterator((&gain * s * gain.transpose()).iter().copied());
                if let Ok(cov) = repair_covariance(&cov) {
                    marginal[*k] = Some(GaussianDensity::new(mean, cov));
                }
            }
        }
        let total = log_sum_exp(&terms);
        if total == f64::NEG_INFINITY {
            return None;
        }
        let kind_post = [(terms[0] - total).exp(), (terms[1] - total).exp()];
        Some(Detection {
            log_lik: r.ln() + p_d.ln() + total,
            kind_post,
            marginal,
        })
    }

    fn birth(&self, z: &DVector<f64>, cfg: &FilterConfig, r_cov: &DMatrix<f64>) -> Birth {
        let mut out = Birth {
            log_rho: [f64::NEG_INFINITY; 2],
            densities: [None, None],
        };
        let p_d = cfg.sensor.detection_prob;
        let volume = cfg.birth.volume();
        for (k, kind) in KINDS.iter().enumerate() {
            let lambda = self.undetected[k] / volume;
            if !(lambda > 0.0 && p_d > 0.0) {
                continue;
            }
            if let Some((log_like, dens)) = self.birth_fit(z, *kind, cfg, r_cov) {
                out.log_rho[k] = p_d.ln() + lambda.ln() + log_like;
                out.densities[k] = Some(dens);
            }
        }
        out
    }

    /// Gauss-Newton fit of a new landmark of `kind` to `z`. Returns the log
    /// of the linearized integral of `N(z; h(x), R_eff)` over `x` and the
    /// resulting position density.
    fn birth_fit(
        &self,
        z: &DVector<f64>,
        kind: LandmarkKind,
        cfg: &FilterConfig,
        r_cov: &DMatrix<f64>,
    ) -> Option<(f64, LandmarkDensity)> {
        let ue = self.ue_state();
        let bs = cfg.bs_position;
        let dim = z.len();
        let zm = Measurement::from_slice(z.as_slice()).ok()?;
        let mut x = birth_position(&zm, &ue, &bs, kind).ok()?;
        let p_ue = dyn_block(&self.ue.cov);
        let mut fit = None;
        for iter in 0..3 {
            let lin = linearize(&Landmark::new(x, kind), &bs, &ue, cfg.motion.speed, dim).ok()?;
            let b = lin.b.as_ref()?;
            let r_eff = r_cov + &lin.a * &p_ue * lin.a.transpose();
            let r_chol = r_eff.clone().cholesky()?;
            let rb = r_chol.solve(b);
            let info = b.transpose() * &rb;
            let info_chol = info.clone().cholesky()?;
            let nu = innovation(z, &lin.h);
            if iter == 2 {
                fit = Some((r_chol, info_chol, nu));
                break;
            }
            let step = info_chol.solve(&(rb.transpose() * &nu));
            x += Vector3::new(step[0], step[1], step[2]);
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
        }
        let (r_chol, info_chol, nu) = fit?;
        if !cfg.birth.contains(&x) {
            return None;
        }
        let log_det = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let resid = nu.dot(&r_chol.solve(&nu));
        let log_like = 0.5 * (3.0 - dim as f64) * (2.0 * PI).ln() - 0.5 * log_det(&r_chol) - 0.5 * log_det(&info_chol) - 0.5 * resid;
        let cov = info_chol.inverse();
        let cov = repair_covariance(&Matrix3::from_iterator(cov.iter().copied())).ok()?;
        Some((log_like, GaussianDensity::new(x, cov)))
    }

    /// Measurement update with `gamma`-best DAs and PMB reduction.
    ///
    /// Only `scan.measurements` drive the update. `scan.truth` is copied
    /// onto newborn components as a diagnostic tag.
    pub fn update(&mut self, scan: &Scan, cfg: &FilterConfig) -> Result<UpdateReport> {
        let dim = cfg.sensor.meas_dim();
        let r_cov = cfg.sensor.noise.covariance(cfg.sensor.with_doppler);
        let zs = Self::measurement_vectors(scan, dim)?;
        let m = zs.len();
        let n = 1 + self.bernoullis.len();
        let p_d = cfg.sensor.detection_prob;

        let models: Vec<RowModel> = (0..n).map(|i| self.row_model(i, cfg, &r_cov)).collect();
        let dets: Vec<Vec<Option<Detection>>> = (0..n)
            .map(|i| zs.iter().map(|z| self.detection(i, &models[i], z, cfg)).collect())
            .collect();
        let births: Vec<Birth> = zs.iter().map(|z| self.birth(z, cfg, &r_cov)).collect();

        let log_clutter = cfg.sensor.clutter_density().ln();
        let log_new: Vec<f64> = births
            .iter()
            .map(|b| log_sum_exp(&[log_clutter, b.log_rho[0], b.log_rho[1]]))
            .collect();
        let log_miss: Vec<f64> = (0..n)
            .map(|i| {
                let r = if i == 0 { 1.0 } else { self.bernoullis[i - 1].existence };
                (1.0 - r * p_d).ln()
            })
            .collect();

        let mut costs = CostMatrix::filled(n, m + n, f64::INFINITY);
        for i in 0..n {
            let miss_ref = if log_miss[i].is_finite() { log_miss[i] } else { 0.0 };
            if log_miss[i].is_finite() {
                costs.set(i, m + i, 0.0);
            }
            for j in 0..m {
                if let Some(d) = &dets[i][j] {
                    let new_ref = log_new[j].max(f64::MIN_POSITIVE.ln());
                    costs.set(i, j, -(d.log_lik - miss_ref - new_ref));
                }
            }
        }

        let mut das = kbest(&costs, cfg.gamma).map_err(|_| Error::NoFeasibleDa)?;
        // A measurement nobody explains must be left to clutter or birth.
        das.retain(|a| {
            let mut used = vec![false; m];
            a.row_to_col.iter().filter(|&&c| c < m).for_each(|&c| used[c] = true);
            (0..m).all(|j| used[j] || log_new[j].is_finite())
        });
        if das.is_empty() {
            return Err(Error::NoFeasibleDa);
        }
        let c0 = das[0].cost;
        let raw: Vec<f64> = das.iter().map(|a| (-(a.cost - c0)).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();

        let row_tags = std::iter::once(Some(Source::Bs))
            .chain(self.bernoullis.iter().map(|b| b.tag))
            .collect();

        let mut ue_parts = Vec::with_capacity(das.len());
        // Per Bernoulli: (weight * r, kind probs, densities) for every DA.
        let mut ber_parts: Vec<Vec<BernoulliPart>> = vec![Vec::new(); n - 1];
        let mut new_weight = vec![0.0; m];
        for (da, &w) in das.iter().zip(&weights) {
            let (ue_post, lm_post) = self.joint_update(da.row_to_col.as_slice(), m, &zs, &models, &dets, &r_cov)?;
            ue_parts.push((w, ue_post));
            let mut used = vec![false; m];
            for (i, &j) in da.row_to_col.iter().enumerate() {
                if j < m {
                    used[j] = true;
                }
                if i == 0 {
                    continue;
                }
                let ber = &self.bernoullis[i - 1];
                if j < m {
                    let d = dets[i][j].as_ref().expect("assigned pairs are gated in");
                    let mut dens = ber.densities.clone();
                    for (slot, md) in dens.iter_mut().zip(&d.marginal) {
                        if let Some(md) = md {
                            *slot = md.clone();
                        }
                    }
                    if let Some((k, jd)) = lm_post.iter().find(|(row, _, _)| *row == i).map(|(_, k, d)| (*k, d)) {
                        dens[k] = jd.clone();
                    }
                    ber_parts[i - 1].push((w, d.kind_post, dens));
                } else {
                    let r = ber.existence * (1.0 - p_d) / (1.0 - ber.existence * p_d);
                    ber_parts[i - 1].push((w * r, ber.kind_probs, ber.densities.clone()));
                }
            }
            for j in 0..m {
                if !used[j] {
                    new_weight[j] += w;
                }
            }
        }

        self.ue = moment_match(&ue_parts, Some(2))?;
        self.ue.mean[2] = wrap_angle(self.ue.mean[2]);

        let mut next = Vec::with_capacity(n - 1 + m);
        for (ber, parts) in self.bernoullis.iter().zip(&ber_parts) {
            if let Some(b) = merge_bernoulli(parts, ber.tag)? {
                next.push(b);
            }
        }
        for j in 0..m {
            let b = &births[j];
            let log_rho = log_sum_exp(&b.log_rho);
            if log_rho == f64::NEG_INFINITY || new_weight[j] <= 0.0 {
                continue;
            }
            let r_new = (log_rho - log_new[j]).exp();
            let probs = [(b.log_rho[0] - log_rho).exp(), (b.log_rho[1] - log_rho).exp()];
            let fallback = b.densities.iter().flatten().next().expect("a feasible kind exists").clone();
            next.push(Bernoulli {
                existence: (new_weight[j] * r_new).clamp(0.0, 1.0),
                kind_probs: probs,
                densities: [
                    b.densities[0].clone().unwrap_or_else(|| fallback.clone()),
                    b.densities[1].clone().unwrap_or(fallback),
                ],
                tag: scan.truth.get(j).copied(),
            });
        }

        for u in &mut self.undetected {
            *u *= 1.0 - p_d;
        }
        next.retain(|b| b.existence >= cfg.prune_r);
        if next.len() > cfg.max_components {
            let mut order: Vec<usize> = (0..next.len()).collect();
            order.sort_by(|&a, &b| next[b].existence.total_cmp(&next[a].existence).then(a.cmp(&b)));
            let mut keep = order[..cfg.max_components].to_vec();
            keep.sort_unstable();
            next = keep.into_iter().map(|i| next[i].clone()).collect();
        }
        self.bernoullis = next;

        Ok(UpdateReport {
            associations: das
                .into_iter()
                .zip(weights)
                .map(|(a, weight)| DataAssociation {
                    row_to_col: a.row_to_col,
                    cost: a.cost,
                    weight,
                })
                .collect(),
            measurement_count: m,
            row_tags,
        })
    }

    /// Stacked EKF update of the UE and every landmark detected under one
    /// DA, each landmark in its most likely kind. Returns the UE marginal
    /// and `(row, kind, density)` for the landmarks.
    #[allow(clippy::type_complexity)]
    fn joint_update(
        &self,
        row_to_col: &[usize],
        m: usize,
        zs: &[DVector<f64>],
        models: &[RowModel],
        dets: &[Vec<Option<Detection>>],
        r_cov: &DMatrix<f64>,
    ) -> Result<(UeDensity, Vec<(usize, usize, LandmarkDensity)>)> {
        let dim = r_cov.nrows();
        let assoc: Vec<(usize, usize)> = row_to_col
            .iter()
            .enumerate()
            .filter(|(_, &j)| j < m)
            .map(|(i, &j)| (i, j))
            .collect();
        if assoc.is_empty() {
            return Ok((self.ue.clone(), Vec::new()));
        }
        // (row, kind, offset in the stacked state)
        let mut lms = Vec::new();
        let mut n_state = 4;
        for &(i, j) in &assoc {
            if i > 0 {
                let post = dets[i][j].as_ref().expect("assigned pairs are gated in").kind_post;
                let k = if post[1] > post[0] { 1 } else { 0 };
                lms.push((i, k, n_state));
                n_state += 3;
            }
        }
        let mut x = DVector::zeros(n_state);
        let mut p = DMatrix::zeros(n_state, n_state);
        x.rows_mut(0, 4).copy_from(&self.ue.mean);
        p.view_mut((0, 0), (4, 4)).copy_from(&self.ue.cov);
        for &(i, k, o) in &lms {
            let d = &self.bernoullis[i - 1].densities[k];
            x.rows_mut(o, 3).copy_from(&d.mean);
            p.view_mut((o, o), (3, 3)).copy_from(&d.cov);
        }

        let rows = dim * assoc.len();
        let mut h = DMatrix::zeros(rows, n_state);
        let mut nu = DVector::zeros(rows);
        let mut r_big = DMatrix::zeros(rows, rows);
        for (t, &(i, j)) in assoc.iter().enumerate() {
            let k = lms.iter().find(|l| l.0 == i).map_or(0, |l| l.1);
            let lin = &models[i]
                .kinds
                .iter()
                .find(|e| e.0 == k)
                .expect("gated pairs have a model for their kind")
                .1;
            let r0 = t * dim;
            h.view_mut((r0, 0), (dim, 4)).copy_from(&lin.a);
            if let (Some(b), Some(&(_, _, o))) = (&lin.b, lms.iter().find(|l| l.0 == i)) {
                h.view_mut((r0, o), (dim, 3)).copy_from(b);
            }
            nu.rows_mut(r0, dim).copy_from(&innovation(&zs[j], &lin.h));
            r_big.view_mut((r0, r0), (dim, dim)).copy_from(r_cov);
        }

        let ph = &p * h.transpose();
        let s = &h * &ph + &r_big;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("innovation covariance is not positive definite".into()))?;
        let gain = chol.solve(&ph.transpose()).transpose();
        x += &gain * &nu;
        let ikh = DMatrix::identity(n_state, n_state) - &gain * &h;
        let p = &ikh * &p * ikh.transpose() + &gain * &r_big * gain.transpose();

        let mut ue_mean = Vector4::from_iterator(x.rows(0, 4).iter().copied());
        ue_mean[2] = wrap_angle(ue_mean[2]);
        let ue_cov = repair_covariance(&Matrix4::from_iterator(p.view((0, 0), (4, 4)).iter().copied()))?;
        let mut out = Vec::with_capacity(lms.len());
        for &(i, k, o) in &lms {
            let mean = Vector3::from_iterator(x.rows(o, 3).iter().copied());
            let cov = repair_covariance(&Matrix3::from_iterator(p.view((o, o), (3, 3)).iter().copied()))?;
            out.push((i, k, GaussianDensity::new(mean, cov)));
        }
        Ok((GaussianDensity::new(ue_mean, ue_cov), out))
    }
}

/// Weighted moment matching; component `wrap` (if any) is an angle.
fn moment_match<const N: usize>(parts: &[(f64, GaussianDensity<N>)], wrap: Option<usize>) -> Result<GaussianDensity<N>> {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    if !(total > 0.0) {
        return Err(Error::NumericalFailure("moment matching with zero total weight".into()));
    }
    let reference = parts[0].1.mean;
    let offset = |m: &SVector<f64, N>| {
        let mut d = m - reference;
        if let Some(a) = wrap {
            d[a] = wrap_angle(d[a]);
        }
        d
    };
    let mean_off = parts
        .iter()
        .fold(SVector::<f64, N>::zeros(), |acc, (w, g)| acc + offset(&g.mean) * (*w / total));
    let mut cov = SMatrix::<f64, N, N>::zeros();
    for (w, g) in parts {
        let d = offset(&g.mean) - mean_off;
        cov += (g.cov + d * d.transpose()) * (*w / total);
    }
    Ok(GaussianDensity::new(reference + mean_off, repair_covariance(&cov)?))
}

/// Collapses one Bernoulli's per-DA outcomes `(w * r, kind probs,
/// densities)` into a single component.
fn merge_bernoulli(parts: &[(f64, [f64; 2], [LandmarkDensity; 2])], tag: Option<Source>) -> Result<Option<Bernoulli>> {
    let existence: f64 = parts.iter().map(|p| p.0).sum();
    if !(existence > 0.0) {
        return Ok(None);
    }
    let mut kind_probs = [0.0; 2];
    let mut densities = parts[0].2.clone();
    for k in 0..2 {
        let items: Vec<(f64, LandmarkDensity)> = parts
            .iter()
            .filter(|p| p.0 * p.1[k] > 0.0)
            .map(|p| (p.0 * p.1[k], p.2[k].clone()))
            .collect();
        kind_probs[k] = items.iter().map(|i| i.0).sum::<f64>() / existence;
        if !items.is_empty() {
            densities[k] = moment_match(&items, None)?;
        }
    }
    let norm = kind_probs[0] + kind_probs[1];
    let kind_probs = if norm > 0.0 { [kind_probs[0] / norm, kind_probs[1] / norm] } else { [0.5, 0.5] };
    Ok(Some(Bernoulli {
        existence: existence.min(1.0),
        kind_probs,
        densities,
        tag,
    }))
}

/// Total weight the update gave to the ground-truth DA.
///
/// A DA counts as correct when every assigned pair has matching tags and
/// every measurement of a tracked landmark is assigned. Rows born from
/// clutter are correct only when left undetected.
pub fn da_diagnostics(report: &UpdateReport, scan: &Scan) -> f64 {
    let m = report.measurement_count;
    let tracked = |src: Source| src != Source::Clutter && report.row_tags.contains(&Some(src));
    report
        .associations
        .iter()
        .filter(|a| {
            let mut used = vec![false; m];
            for (i, &j) in a.row_to_col.iter().enumerate() {
                if j < m {
                    used[j] = true;
                    let tag = report.row_tags[i];
                    if tag.is_none() || tag != Some(scan.truth[j]) || scan.truth[j] == Source::Clutter {
                        return false;
                    }
                }
            }
            (0..m).all(|j| used[j] || !tracked(scan.truth[j]))
        })
        .map(|a| a.weight)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Scenario;
    use crate::sensing::{generate_scan, MeasurementNoise};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn init() -> UeState<f64> {
        UeState::new(70.7285, 0.0, FRAC_PI_2, 300.0)
    }

    fn p0() -> Matrix4<f64> {
        Matrix4::from_diagonal(&Vector4::new(0.3, 0.3, 0.0052, 0.3))
    }

    fn quiet_cfg(with_doppler: bool) -> FilterConfig {
        let mut cfg = FilterConfig::standard(0.1, with_doppler);
        cfg.sensor.detection_prob = 1.0;
        cfg.sensor.clutter_rate = 0.0;
        cfg
    }

    fn clean_scan(scenario: &Scenario<f64>, ue: &UeState<f64>, with_doppler: bool) -> Scan {
        let paths = std::iter::once((Source::Bs, &scenario.bs))
            .chain(scenario.landmarks.iter().enumerate().map(|(i, l)| (Source::Landmark(i), l)));
        let (measurements, truth) = paths
            .map(|(s, l)| (measure(l, &scenario.bs.position, ue, 22.22, with_doppler).unwrap(), s))
            .unzip();
        Scan { measurements, truth }
    }

    fn one_landmark_belief(r: f64) -> PmbBelief {
        let mut b = PmbBelief::new(&init(), p0(), &BirthModel::standard());
        b.undetected = [0.0, 0.0];
        let d = GaussianDensity::new(Vector3::new(201.0, 1.0, 40.0), Matrix3::identity() * 4.0);
        b.bernoullis.push(Bernoulli {
            existence: r,
            kind_probs: [1.0, 0.0],
            densities: [d.clone(), d],
            tag: Some(Source::Landmark(0)),
        });
        b
    }

    #[test]
    fn predict_moves_only_the_ue() {
        let cfg = MotionConfig::standard();
        let mut b = one_landmark_belief(0.7);
        let before = b.bernoullis.clone();
        b.predict(&cfg);
        assert_eq!(b.ue.mean, propagate(&init(), &cfg).to_vector());
        assert_eq!(b.bernoullis, before);

        let still = MotionConfig {
            speed: 0.0,
            turn_rate: 0.0,
            period: 0.5,
            process_noise: Matrix4::zeros(),
        };
        let mut b = one_landmark_belief(0.7);
        b.predict(&still);
        assert_eq!(b.ue.mean, init().to_vector());
        assert_eq!(b.ue.cov, p0());
    }

    #[test]
    fn empty_scan_applies_misdetection_formula() {
        let cfg = FilterConfig::standard(0.1, true);
        let mut b = one_landmark_belief(0.5);
        let ue_before = b.ue.clone();
        let report = b.update(&Scan::default(), &cfg).unwrap();
        assert_eq!(report.associations.len(), 1);
        assert_relative_eq!(b.bernoullis[0].existence, 0.5 * 0.1 / (1.0 - 0.45), epsilon = 1e-15);
        assert_relative_eq!(b.bernoullis[0].existence, 0.0909090909, epsilon = 1e-9);
        assert_eq!(b.ue, ue_before);
    }

    #[test]
    fn single_detection_shrinks_covariances() {
        let mut cfg = quiet_cfg(true);
        cfg.gamma = 1;
        let mut b = one_landmark_belief(0.9);
        let z = measure(&Landmark::va(200.0, 0.0, 40.0), &cfg.bs_position, &init(), 22.22, true).unwrap();
        let z_bs = measure(&cfg.bs(), &cfg.bs_position, &init(), 22.22, true).unwrap();
        let scan = Scan {
            measurements: vec![z_bs, z],
            truth: vec![Source::Bs, Source::Landmark(0)],
        };
        let (ue_tr, lm_tr) = (b.ue.cov.trace(), b.bernoullis[0].densities[0].cov.trace());
        let report = b.update(&scan, &cfg).unwrap();
        assert_eq!(report.associations.len(), 1);
        assert_eq!(report.associations[0].row_to_col, vec![0, 1]);
        assert!(b.ue.cov.trace() < ue_tr);
        assert!(b.bernoullis[0].densities[0].cov.trace() < lm_tr);
        assert_eq!(b.bernoullis[0].existence, 1.0);
        assert_eq!(da_diagnostics(&report, &scan), 1.0);
    }

    #[test]
    fn weights_normalized_and_invariants_hold() {
        let scenario = Scenario::standard();
        let cfg = FilterConfig::standard(0.1, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = PmbBelief::new(&init(), p0(), &cfg.birth);
        let traj = crate::dynamics::nominal_trajectory(&init(), &cfg.motion, 12);
        for ue in &traj {
            b.predict(&cfg.motion);
            let scan = generate_scan(&scenario, ue, 22.22, &cfg.sensor, &mut rng).unwrap();
            let report = b.update(&scan, &cfg).unwrap();
            let total: f64 = report.associations.iter().map(|a| a.weight).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
            assert!(report.associations.len() <= cfg.gamma);
            let w = da_diagnostics(&report, &scan);
            assert!((0.0..=1.0 + 1e-12).contains(&w));
            for ber in &b.bernoullis {
                assert!((0.0..=1.0).contains(&ber.existence));
                assert_relative_eq!(ber.kind_probs[0] + ber.kind_probs[1], 1.0, epsilon = 1e-12);
                for d in &ber.densities {
                    assert!(d.cov.symmetric_eigenvalues().min() >= -1e-10);
                    assert_eq!(d.cov, d.cov.transpose());
                }
            }
            assert!(b.ue.cov.symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn noiseless_run_recovers_the_map() {
        let scenario = Scenario::standard();
        let mut cfg = quiet_cfg(true);
        cfg.sensor.noise = MeasurementNoise::standard(0.1);
        cfg.motion.process_noise = Matrix4::zeros();
        let mut b = PmbBelief::new(&init(), p0(), &cfg.birth);
        for ue in crate::dynamics::nominal_trajectory(&init(), &cfg.motion, 40) {
            b.predict(&cfg.motion);
            b.update(&clean_scan(&scenario, &ue, true), &cfg).unwrap();
        }
        let est = b.estimate(cfg.report_r);
        assert_eq!(est.map.len(), 8, "{:?}", est.map);
        for lm in &scenario.landmarks {
            let best = est
                .map
                .iter()
                .filter(|e| e.kind == lm.kind)
                .map(|e| (e.position - lm.position).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1.0, "{lm:?}: {best}");
        }
    }

    #[test]
    fn estimate_thresholds_existence() {
        let mut b = one_landmark_belief(0.99);
        let mut weak = b.bernoullis[0].clone();
        weak.existence = 0.001;
        b.bernoullis.push(weak);
        assert_eq!(b.estimate(0.5).map.len(), 1);
        let fresh = PmbBelief::new(&init(), p0(), &BirthModel::standard());
        assert!(fresh.estimate(0.5).map.is_empty());
    }

    #[test]
    fn diagnostics_reject_wrong_or_missing_truth() {
        let report = UpdateReport {
            associations: vec![
                DataAssociation { row_to_col: vec![1, 0], cost: 0.0, weight: 0.7 },
                DataAssociation { row_to_col: vec![0, 1], cost: 1.0, weight: 0.3 },
            ],
            measurement_count: 2,
            row_tags: vec![Some(Source::Bs), Some(Source::Landmark(3))],
        };
        let scan = |t: [Source; 2]| Scan {
            measurements: vec![Measurement { range: 0.0, aoa_az: 0.0, aoa_el: 0.0, aod_az: 0.0, aod_el: 0.0, doppler: None }; 2],
            truth: t.to_vec(),
        };
        assert_relative_eq!(da_diagnostics(&report, &scan([Source::Landmark(3), Source::Bs])), 0.7);
        assert_relative_eq!(da_diagnostics(&report, &scan([Source::Bs, Source::Landmark(3)])), 0.3);
        assert_eq!(da_diagnostics(&report, &scan([Source::Clutter, Source::Landmark(5)])), 0.0);
    }

    #[test]
    fn repair_clamps_tiny_negative_eigenvalues() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1e-9));
        let fixed = repair_covariance(&m).unwrap();
        assert!(fixed.symmetric_eigenvalues().min() >= 0.0);
        let bad = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(repair_covariance(&bad), Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FilterConfig::standard(0.1, true);
        assert!(cfg.validate().is_ok());
        cfg.gamma = 0;
        assert!(cfg.validate().is_err());
    }
}
