//! Experiment configuration: the versioned JSON schema, its validation,
//! and the bridge to core types.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use torobs_core::{
    BoxRegion, NonlinearitySpec, ObservationWindow, RaySampling, ReconstructionConfig,
    Result as CoreResult, TorusGeometry,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Decay,
    GramianScan,
    Reconstruct,
    DeterminingModes,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Decay => "decay",
            ExperimentKind::GramianScan => "gramian-scan",
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::DeterminingModes => "determining-modes",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Modes per axis; the length of this vector is the dimension.
    pub modes: Vec<usize>,
    /// Side lengths; defaults to 2 pi on every axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
}

impl GeometryConfig {
    pub fn build(&self) -> CoreResult<Arc<TorusGeometry>> {
        let lengths = match &self.lengths {
            Some(l) => l.clone(),
            None => vec![TAU; self.modes.len()],
        };
        TorusGeometry::new(&self.modes, &lengths)
    }
}

/// One (support, plateau) box pair of the observation window, given as
/// per-axis [lo, hi] intervals.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub support: Vec<[f64; 2]>,
    pub plateau: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    /// Coefficients of P'(r) by power of r; empty means f = 0.
    pub coefficients: Vec<f64>,
    pub defocusing: bool,
}

impl NonlinearityConfig {
    pub fn build(&self) -> CoreResult<NonlinearitySpec> {
        NonlinearitySpec::new(&self.coefficients, self.defocusing)
    }
}

/// Overrides for the fixed-point thresholds; anything omitted keeps the
/// library default.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rcond: Option<f64>,
}

impl ReconstructionCfg {
    pub fn build(&self) -> ReconstructionConfig {
        let mut cfg = ReconstructionConfig::default();
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.radius {
            cfg.radius = v;
        }
        if let Some(v) = self.outer_radius {
            cfg.outer_radius = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = self.rcond {
            cfg.rcond = v;
        }
        cfg
    }
}

fn default_damping_amplitude() -> f64 {
    2.5
}

fn default_fit_start() -> f64 {
    1.0
}

fn default_envelope_bin() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCfg {
    /// Peak value of the damping profile a on the window.
    #[serde(default = "default_damping_amplitude")]
    pub amplitude: f64,
    /// Start of the fit window; the earlier transient is excluded.
    #[serde(default = "default_fit_start")]
    pub fit_start: f64,
    /// Envelope bin width for the fit samples.
    #[serde(default = "default_envelope_bin")]
    pub envelope_bin: f64,
}

impl Default for DecayCfg {
    fn default() -> Self {
        DecayCfg {
            amplitude: default_damping_amplitude(),
            fit_start: default_fit_start(),
            envelope_bin: default_envelope_bin(),
        }
    }
}

fn default_potential_count() -> usize {
    5
}

fn default_ball_radius() -> f64 {
    0.8
}

fn default_band_rank() -> usize {
    16
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GramianScanCfg {
    /// Number of seeded potentials per split rank.
    #[serde(default = "default_potential_count")]
    pub potentials: usize,
    /// H^{s+1}-ball radius the sampled potentials are normalized to.
    #[serde(default = "default_ball_radius")]
    pub ball_radius: f64,
    /// Split rank whose low band carries the sampled potentials.
    #[serde(default = "default_band_rank")]
    pub band_rank: usize,
}

impl Default for GramianScanCfg {
    fn default() -> Self {
        GramianScanCfg {
            potentials: default_potential_count(),
            ball_radius: default_ball_radius(),
            band_rank: default_band_rank(),
        }
    }
}

fn default_epsilons() -> Vec<f64> {
    vec![1e-3, 1e-4]
}

fn default_pilot() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DeterminingCfg {
    /// Perturbation sizes to probe.
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Pilot perturbation size used to calibrate the direction constant.
    #[serde(default = "default_pilot")]
    pub pilot: f64,
}

impl Default for DeterminingCfg {
    fn default() -> Self {
        DeterminingCfg {
            epsilons: default_epsilons(),
            pilot: default_pilot(),
        }
    }
}

fn default_levels() -> usize {
    4
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceCfg {
    /// Number of step sizes dt, dt/2, ... compared against one finer run.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl Default for ConvergenceCfg {
    fn default() -> Self {
        ConvergenceCfg {
            levels: default_levels(),
        }
    }
}

fn default_gcc_horizon() -> f64 {
    TAU
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GccCfg {
    /// Control time the rays must reach the plateau within.
    #[serde(default = "default_gcc_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_per_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_rays: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
}

impl GccCfg {
    pub fn sampling(&self, seed: u64) -> RaySampling {
        let mut s = RaySampling {
            seed,
            ..RaySampling::default()
        };
        if let Some(v) = self.positions_per_axis {
            s.positions_per_axis = v;
        }
        if let Some(v) = self.directions {
            s.directions = v;
        }
        if let Some(v) = self.random_rays {
            s.random_rays = v;
        }
        if let Some(v) = self.time_step {
            s.time_step = v;
        }
        s
    }
}

impl Default for GccCfg {
    fn default() -> Self {
        GccCfg {
            horizon: default_gcc_horizon(),
            positions_per_axis: None,
            directions: None,
            random_rays: None,
            time_step: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Config schema version; this build understands version 1.
    pub schema: u32,
    pub kind: ExperimentKind,
    pub geometry: GeometryConfig,
    /// Observation window as (support, plateau) box pairs.
    pub window: Vec<RegionConfig>,
    pub nonlinearity: NonlinearityConfig,
    /// Sobolev index s of the working scale.
    pub scale: f64,
    /// Time horizon T.
    pub horizon: f64,
    pub dt: f64,
    /// Split ranks the experiment sweeps; may be empty for an empty sweep.
    #[serde(default)]
    pub split_ranks: Vec<usize>,
    pub seed: u64,
    /// Output path stem; the record lands in <output>.json and <output>.csv.
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<ReconstructionCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gramian_scan: Option<GramianScanCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub determining_modes: Option<DeterminingCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcc: Option<GccCfg>,
    /// Sweep worker cap; defaults to the rayon global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Documented-range validation; anything structural beyond this is
    /// caught by the library constructors.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!(
                "schema version {} not understood (this build reads {})",
                self.schema, SCHEMA_VERSION
            ));
        }
        if self.geometry.modes.is_empty() {
            return Err("geometry.modes must name at least one axis".into());
        }
        if let Some(lengths) = &self.geometry.lengths {
            if lengths.len() != self.geometry.modes.len() {
                return Err("geometry.lengths must match geometry.modes in length".into());
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(format!(
                "dt {} must lie in (0, horizon = {}]",
                self.dt, self.horizon
            ));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(format!("scale {} must be a nonnegative index", self.scale));
        }
        let total: usize = self.geometry.modes.iter().product();
        for &n in &self.split_ranks {
            if n > total {
                return Err(format!(
                    "split rank {n} exceeds the {total} modes available"
                ));
            }
        }
        if self.kind == ExperimentKind::DeterminingModes && self.split_ranks.is_empty() {
            return Err("determining-modes needs at least one split rank".into());
        }
        if let Some(d) = &self.decay {
            if !(d.amplitude.is_finite() && d.amplitude > 0.0) {
                return Err("decay.amplitude must be positive".into());
            }
            if !(0.0..self.horizon).contains(&d.fit_start) {
                return Err("decay.fit_start must lie inside [0, horizon)".into());
            }
            if !(d.envelope_bin.is_finite() && d.envelope_bin > 0.0) {
                return Err("decay.envelope_bin must be positive".into());
            }
        }
        if let Some(g) = &self.gramian_scan {
            if !(g.ball_radius.is_finite() && g.ball_radius > 0.0) {
                return Err("gramian_scan.ball_radius must be positive".into());
            }
        }
        if let Some(d) = &self.determining_modes {
            if d.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) || d.pilot <= 0.0 {
                return Err("determining_modes sizes must be positive".into());
            }
        }
        if let Some(c) = &self.convergence {
            if c.levels == 0 {
                return Err("convergence.levels must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn build_window(&self, geom: &Arc<TorusGeometry>) -> CoreResult<ObservationWindow> {
        let regions = self
            .window
            .iter()
            .map(|r| {
                let lo = |b: &Vec<[f64; 2]>| b.iter().map(|p| p[0]).collect::<Vec<_>>();
                let hi = |b: &Vec<[f64; 2]>| b.iter().map(|p| p[1]).collect::<Vec<_>>();
                (
                    BoxRegion::new(lo(&r.support), hi(&r.support)),
                    BoxRegion::new(lo(&r.plateau), hi(&r.plateau)),
                )
            })
            .collect();
        ObservationWindow::new(geom, regions)
    }

    /// Node count of the uniform grid covering [0, horizon] at step dt.
    pub fn node_count(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }
}
