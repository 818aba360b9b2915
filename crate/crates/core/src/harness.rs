//! Experiment configuration, Monte-Carlo orchestration and report files.
//!
//! Configuration is JSON. Every field has a default, so `{}` is the
//! standard 5G downlink scenario; units are part of the field names.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_trajectory, MotionConfig};
use crate::error::{Error, Result};
use crate::geometry::{Landmark, LandmarkKind, Scenario, UeState};
use crate::metrics::{gospa, GospaParams, MetricsSeries, Rmse};
use crate::pcrb::{sweep_sigma_d, Aggregation, BoundSetup, BoundsReport, SweepCell};
use crate::pmb_filter::{da_diagnostics, BirthModel, FilterConfig, PmbBelief};
use crate::sensing::{generate_scan, ClutterRegion, MeasurementNoise, Scan, SensorConfig};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSpec {
    pub kind: LandmarkKind,
    pub position_m: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSettings {
    pub bs_position_m: [f64; 3],
    pub landmarks: Vec<LandmarkSpec>,
}

impl Default for ScenarioSettings {
    fn default() -> Self {
        let s = Scenario::<f64>::standard();
        Self {
            bs_position_m: s.bs.position.into(),
            landmarks: s
                .landmarks
                .iter()
                .map(|l| LandmarkSpec {
                    kind: l.kind,
                    position_m: l.position.into(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSettings {
    pub speed_mps: f64,
    pub turn_rate_radps: f64,
    pub period_s: f64,
    pub process_var_x_m2: f64,
    pub process_var_y_m2: f64,
    pub process_var_heading_rad2: f64,
    pub process_var_bias_m2: f64,
}

impl Default for MotionSettings {
    fn default() -> Self {
        Self {
            speed_mps: 22.22,
            turn_rate_radps: std::f64::consts::PI / 10.0,
            period_s: 0.5,
            process_var_x_m2: 0.04,
            process_var_y_m2: 0.04,
            process_var_heading_rad2: 1e-6,
            process_var_bias_m2: 0.04,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UeInitSettings {
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub clock_bias_m: f64,
    pub var_x_m2: f64,
    pub var_y_m2: f64,
    pub var_heading_rad2: f64,
    pub var_bias_m2: f64,
}

impl Default for UeInitSettings {
    fn default() -> Self {
        Self {
            x_m: 70.7285,
            y_m: 0.0,
            heading_rad: std::f64::consts::FRAC_PI_2,
            clock_bias_m: 300.0,
            var_x_m2: 0.3,
            var_y_m2: 0.3,
            var_heading_rad2: 0.0052,
            var_bias_m2: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSettings {
    pub range_var_m2: f64,
    pub angle_var_rad2: f64,
    pub sigma_d_mps: f64,
    pub detection_prob: f64,
    /// Expected clutter measurements per scan.
    pub clutter_rate: f64,
    /// Defaults to the full angle boxes, [0, 600] m and [-v, v] m/s.
    pub clutter_region: Option<ClutterRegion>,
}

impl Default for SensorSettings {
    fn default() -> Self {
        Self {
            range_var_m2: 1e-2,
            angle_var_rad2: 2.5e-3,
            sigma_d_mps: 0.1,
            detection_prob: 0.9,
            clutter_rate: 1.0,
            clutter_region: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub gamma: usize,
    pub prune_r: f64,
    pub gate_sigma: f64,
    pub max_components: usize,
    pub report_r: f64,
    pub birth: BirthModel,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            gamma: 10,
            prune_r: 1e-4,
            gate_sigma: 5.0,
            max_components: 50,
            report_r: 0.5,
            birth: BirthModel::standard(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    /// Landmark block of the initial information matrix, per axis.
    pub lm_prior_var_m2: f64,
    pub sigma_d_grid_mps: Vec<f64>,
    pub aggregation: Aggregation,
    /// Landmark prior variances for the sensitivity table.
    pub sensitivity_lm_prior_var_m2: Vec<f64>,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            lm_prior_var_m2: 100.0,
            sigma_d_grid_mps: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            aggregation: Aggregation::Final,
            sensitivity_lm_prior_var_m2: vec![1.0, 10.0, 100.0, 1000.0, 10000.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GospaSettings {
    pub cutoff_m: f64,
    pub order: f64,
    pub alpha: f64,
}

impl Default for GospaSettings {
    fn default() -> Self {
        Self {
            cutoff_m: 20.0,
            order: 2.0,
            alpha: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSettings,
    pub motion: MotionSettings,
    pub ue_init: UeInitSettings,
    /// Filter steps after the initial state.
    pub steps: usize,
    pub sensor: SensorSettings,
    pub filter: FilterSettings,
    pub bounds: BoundSettings,
    pub gospa: GospaSettings,
    pub runs: usize,
    pub base_seed: u64,
    pub doppler: bool,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSettings::default(),
            motion: MotionSettings::default(),
            ue_init: UeInitSettings::default(),
            steps: 40,
            sensor: SensorSettings::default(),
            filter: FilterSettings::default(),
            bounds: BoundSettings::default(),
            gospa: GospaSettings::default(),
            runs: 100,
            base_seed: 1,
            doppler: true,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        self.scenario().validate()?;
        self.filter_config().validate()?;
        self.gospa_params().validate()?;
        if !(self.bounds.lm_prior_var_m2 > 0.0) {
            return Err(Error::Config("landmark prior variance must be positive".into()));
        }
        if self.ue_cov().cholesky().is_none() {
            return Err(Error::Config("UE initial covariance must be positive definite".into()));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario<f64> {
        let bs = Vector3::from(self.scenario.bs_position_m);
        Scenario {
            bs: Landmark::new(bs, LandmarkKind::Bs),
            landmarks: self
                .scenario
                .landmarks
                .iter()
                .map(|l| Landmark::new(Vector3::from(l.position_m), l.kind))
                .collect(),
            speed_of_light: 299_792_458.0,
        }
    }

    pub fn motion(&self) -> MotionConfig<f64> {
        let m = &self.motion;
        MotionConfig {
            speed: m.speed_mps,
            turn_rate: m.turn_rate_radps,
            period: m.period_s,
            process_noise: Matrix4::from_diagonal(&Vector4::new(
                m.process_var_x_m2,
                m.process_var_y_m2,
                m.process_var_heading_rad2,
                m.process_var_bias_m2,
            )),
        }
    }

    pub fn ue_init(&self) -> UeState<f64> {
        let u = &self.ue_init;
        UeState::new(u.x_m, u.y_m, u.heading_rad, u.clock_bias_m)
    }

    pub fn ue_cov(&self) -> Matrix4<f64> {
        let u = &self.ue_init;
        Matrix4::from_diagonal(&Vector4::new(u.var_x_m2, u.var_y_m2, u.var_heading_rad2, u.var_bias_m2))
    }

    pub fn noise(&self, sigma_d: f64) -> MeasurementNoise<f64> {
        let s = &self.sensor;
        MeasurementNoise {
            non_doppler: nalgebra::Matrix5::from_diagonal(&nalgebra::Vector5::new(
                s.range_var_m2,
                s.angle_var_rad2,
                s.angle_var_rad2,
                s.angle_var_rad2,
                s.angle_var_rad2,
            )),
            sigma_d,
        }
    }

    pub fn sensor(&self) -> SensorConfig {
        let s = &self.sensor;
        SensorConfig {
            noise: self.noise(s.sigma_d_mps),
            detection_prob: s.detection_prob,
            clutter_rate: s.clutter_rate,
            clutter_region: s
                .clutter_region
                .clone()
                .unwrap_or_else(|| ClutterRegion::standard(self.motion.speed_mps)),
            with_doppler: self.doppler,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        let f = &self.filter;
        FilterConfig {
            gamma: f.gamma,
            prune_r: f.prune_r,
            gate: f.gate_sigma,
            max_components: f.max_components,
            report_r: f.report_r,
            birth: f.birth.clone(),
            sensor: self.sensor(),
            motion: self.motion(),
            bs_position: Vector3::from(self.scenario.bs_position_m),
        }
    }

    pub fn gospa_params(&self) -> GospaParams<f64> {
        GospaParams {
            cutoff: self.gospa.cutoff_m,
            order: self.gospa.order,
            alpha: self.gospa.alpha,
        }
    }

    pub fn bound_setup(&self) -> BoundSetup<f64> {
        BoundSetup {
            scenario: self.scenario(),
            motion: self.motion(),
            init: self.ue_init(),
            ue_prior_cov: self.ue_cov(),
            lm_prior_cov: Matrix3::identity() * self.bounds.lm_prior_var_m2,
            steps: self.steps,
        }
    }
}

/// Ground truth and scans of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub seed: u64,
    /// States at steps `0..=steps`; index 0 is the initial state.
    pub truth: Vec<UeState<f64>>,
    /// Scans at steps `1..=steps`.
    pub scans: Vec<Scan>,
}

/// Truth trajectory and scans for `seed`. The Doppler flag only decides
/// whether the Doppler coordinate is kept, so on/off runs are paired.
pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = cfg.ue_init();
    let motion = cfg.motion();
    let scenario = cfg.scenario();
    let sensor = cfg.sensor();
    let mut truth = vec![init];
    truth.extend(simulate_trajectory(&init, &motion, cfg.steps, true, &mut rng));
    let scans = truth[1..]
        .iter()
        .map(|ue| generate_scan(&scenario, ue, motion.speed, &sensor, &mut rng))
        .collect::<Result<_>>()?;
    Ok(Simulation { seed, truth, scans })
}

/// Filters one simulated run and scores it.
pub fn run_filter(cfg: &RunConfig, sim: &Simulation) -> Result<MetricsSeries> {
    let fcfg = cfg.filter_config();
    let scenario = cfg.scenario();
    let params = cfg.gospa_params();
    let truth_va: Vec<Vector3<f64>> = scenario.landmarks_of(LandmarkKind::Va).map(|l| l.position).collect();
    let truth_sp: Vec<Vector3<f64>> = scenario.landmarks_of(LandmarkKind::Sp).map(|l| l.position).collect();
    let mut belief = PmbBelief::new(&sim.truth[0], cfg.ue_cov(), &fcfg.birth);
    let mut out = MetricsSeries::default();
    for (truth, scan) in sim.truth[1..].iter().zip(&sim.scans) {
        belief.predict(&fcfg.motion);
        let report = belief.update(scan, &fcfg)?;
        let est = belief.estimate(fcfg.report_r);
        out.gospa_va.push(gospa(&truth_va, &est.positions_of(LandmarkKind::Va), &params).total);
        out.gospa_sp.push(gospa(&truth_sp, &est.positions_of(LandmarkKind::Sp), &params).total);
        out.correct_da_weight.push(da_diagnostics(&report, scan));
        out.rmse.push(truth, &est.ue);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub metrics: MetricsSeries,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean over runs at each step.
    pub gospa_va: Vec<f64>,
    pub gospa_sp: Vec<f64>,
    pub correct_da_weight: Vec<f64>,
    pub final_gospa_va: f64,
    pub final_gospa_sp: f64,
    /// Pooled over all runs and steps.
    pub rmse: Rmse,
    pub rmse_heading_deg: f64,
    pub mean_correct_da_weight: f64,
}

impl Summary {
    pub fn from_runs(runs: &[RunRecord]) -> Self {
        let Some(first) = runs.first() else {
            return Self::default();
        };
        let n = runs.len() as f64;
        let steps = first.metrics.gospa_va.len();
        let mean_at = |f: fn(&MetricsSeries) -> &Vec<f64>| -> Vec<f64> {
            (0..steps)
                .map(|k| runs.iter().map(|r| f(&r.metrics)[k]).sum::<f64>() / n)
                .collect()
        };
        let gospa_va = mean_at(|m| &m.gospa_va);
        let gospa_sp = mean_at(|m| &m.gospa_sp);
        let correct_da_weight = mean_at(|m| &m.correct_da_weight);
        let mut acc = crate::metrics::RmseAccumulator::default();
        runs.iter().for_each(|r| acc.merge(&r.metrics.rmse));
        let rmse = acc.finish();
        let mean_correct_da_weight = correct_da_weight.iter().sum::<f64>() / steps.max(1) as f64;
        Self {
            final_gospa_va: gospa_va.last().copied().unwrap_or(0.0),
            final_gospa_sp: gospa_sp.last().copied().unwrap_or(0.0),
            gospa_va,
            gospa_sp,
            correct_da_weight,
            rmse_heading_deg: rmse.heading_deg(),
            rmse,
            mean_correct_da_weight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config: RunConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
}

fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs `cfg.runs` independent simulations; run `j` uses seed
/// `base_seed + j`. Results do not depend on the worker count.
pub fn run_monte_carlo(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let runs = with_pool(cfg.workers, || {
        (0..cfg.runs)
            .into_par_iter()
            .map(|j| {
                let seed = cfg.base_seed.wrapping_add(j as u64);
                let sim = simulate(cfg, seed)?;
                Ok(RunRecord {
                    run: j,
                    seed,
                    metrics: run_filter(cfg, &sim)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(RunReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        summary: Summary::from_runs(&runs),
        runs,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.15e}")
}

/// Per-step means over runs.
pub fn gospa_csv(report: &RunReport) -> String {
    let s = &report.summary;
    let mut out = String::from("k,gospa_va_m,gospa_sp_m,correct_da_weight\n");
    for k in 0..s.gospa_va.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            k + 1,
            fmt(s.gospa_va[k]),
            fmt(s.gospa_sp[k]),
            fmt(s.correct_da_weight[k])
        );
    }
    out
}

/// One row per run.
pub fn runs_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "run,seed,final_gospa_va_m,final_gospa_sp_m,rmse_pos_m,rmse_heading_rad,rmse_bias_m,mean_correct_da_weight\n",
    );
    for r in &report.runs {
        let m = &r.metrics;
        let e = m.rmse.finish();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.run,
            r.seed,
            fmt(m.gospa_va.last().copied().unwrap_or(0.0)),
            fmt(m.gospa_sp.last().copied().unwrap_or(0.0)),
            fmt(e.pos_m),
            fmt(e.heading_rad),
            fmt(e.bias_m),
            fmt(m.mean_correct_da_weight())
        );
    }
    out
}

/// Writes `report.json`, `gospa.csv` and `runs.csv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        ("report.json", serde_json::to_string_pretty(report)? + "\n"),
        ("gospa.csv", gospa_csv(report)),
        ("runs.csv", runs_csv(report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Headline metrics of two reports side by side; `delta = b - a`.
pub fn compare(a: &RunReport, b: &RunReport) -> String {
    let rows = |s: &Summary| {
        [
            ("final_gospa_va_m", s.final_gospa_va),
            ("final_gospa_sp_m", s.final_gospa_sp),
            ("rmse_pos_m", s.rmse.pos_m),
            ("rmse_heading_rad", s.rmse.heading_rad),
            ("rmse_heading_deg", s.rmse_heading_deg),
            ("rmse_bias_m", s.rmse.bias_m),
            ("mean_correct_da_weight", s.mean_correct_da_weight),
        ]
    };
    let mut out = String::from("metric,a,b,delta\n");
    for ((name, x), (_, y)) in rows(&a.summary).into_iter().zip(rows(&b.summary)) {
        let _ = writeln!(out, "{name},{},{},{}", fmt(x), fmt(y), fmt(y - x));
    }
    out
}

/// Aggregated bounds for one landmark prior variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub lm_prior_var_m2: f64,
    /// `None` is the no-Doppler baseline.
    pub sigma_d_mps: Option<f64>,
    pub bounds: BoundsReport<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsMeta {
    pub tool_version: String,
    pub config: RunConfig,
    pub aggregation: Aggregation,
    pub sensitivity: Vec<SensitivityRow>,
}

pub struct BoundsOutput {
    pub cells: Vec<SweepCell<f64>>,
    pub meta: BoundsMeta,
}

/// Bound sweep over `cfg.bounds.sigma_d_grid_mps` plus the landmark-prior
/// sensitivity table.
pub fn run_bounds(cfg: &RunConfig) -> Result<BoundsOutput> {
    cfg.validate()?;
    let grid = &cfg.bounds.sigma_d_grid_mps;
    let noise = cfg.noise(cfg.sensor.sigma_d_mps);
    let cells = sweep_sigma_d(&cfg.bound_setup(), &noise, grid)?;
    let agg = cfg.bounds.aggregation;
    let per_var: Vec<Result<Vec<SensitivityRow>>> = cfg
        .bounds
        .sensitivity_lm_prior_var_m2
        .par_iter()
        .map(|&var| {
            let mut setup = cfg.bound_setup();
            setup.lm_prior_cov = Matrix3::identity() * var;
            Ok(sweep_sigma_d(&setup, &noise, grid)?
                .into_iter()
                .map(|c| SensitivityRow {
                    lm_prior_var_m2: var,
                    sigma_d_mps: c.sigma_d,
                    bounds: agg.apply(&c.series),
                })
                .collect())
        })
        .collect();
    let mut sensitivity = Vec::new();
    for rows in per_var {
        sensitivity.extend(rows?);
    }
    Ok(BoundsOutput {
        cells,
        meta: BoundsMeta {
            tool_version: TOOL_VERSION.to_string(),
            config: cfg.clone(),
            aggregation: agg,
            sensitivity,
        },
    })
}

/// `b.csv` -> `b.summary.csv`, `b.meta.json`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "bounds".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}
