//! The nonlinear high-band fixed point and the reconstruction operators
//! built on it.
//!
//! The central object is the map
//!
//! ```text
//!     Phi(w) = F(g, -i f(v) - i H(v, w) + h),
//! ```
//!
//! where F is the observed Cauchy solver for the potential v: given data g
//! and the Taylor remainder H of the nonlinearity around v, one application
//! solves a linear observed problem. On a small enough high-band ball Phi
//! contracts, and its fixed point is the high-band trajectory consistent
//! with the observation. Reconstruction wraps this with the gate that
//! switches the observation off when the low band is too visible, and
//! verification replays a stored nonlinear trajectory through the solver
//! and reports the recovery error.

use crate::error::{ModelError, Result};
use crate::geometry::check_same;
use crate::nonlinearity::NonlinearitySpec;
use crate::observability::{
    apply_projector, observe_path, ObservedCauchySolver, ObservedTrace, DEFAULT_RCOND,
};
use crate::path::PotentialPath;
use crate::sobolev::SobolevScale;
use crate::split::FrequencySplit;
use crate::window::{smooth_step, ObservationWindow};
use crate::C64;

/// Iterate size at which the Picard loop gives up as divergent.
const DIVERGENCE_GUARD: f64 = 1e6;

/// The smooth gate: 1 on [-1/2, 1/2], 0 outside (-1, 1), monotone between.
pub fn gate(t: f64) -> f64 {
    1.0 - smooth_step(2.0 * t.abs() - 1.0)
}

/// The contraction ball radius `min{1/(4 C L), 1/(2 T L), R0}` suggested by
/// the fixed-point estimates; with no nonlinearity (L = 0) the outer radius
/// survives alone.
pub fn contraction_radius(c_obs: f64, lipschitz: f64, horizon: f64, outer_radius: f64) -> f64 {
    let mut r = outer_radius;
    if lipschitz > 0.0 {
        r = r.min(1.0 / (4.0 * c_obs * lipschitz));
        r = r.min(1.0 / (2.0 * horizon * lipschitz));
    }
    r
}

/// Thresholds and iteration limits for the fixed point.
#[derive(Clone, Debug)]
pub struct ReconstructionConfig {
    /// Observation-smallness threshold for the gate.
    pub eta: f64,
    /// Contraction ball radius R.
    pub radius: f64,
    /// Outer radius R0 bounding R.
    pub outer_radius: f64,
    pub max_iterations: usize,
    /// Convergence tolerance on C^0 H^s increments.
    pub tolerance: f64,
    /// Relative eigenvalue threshold for the Gramian inverse.
    pub rcond: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            eta: 0.1,
            radius: 0.25,
            outer_radius: 1.0,
            max_iterations: 100,
            tolerance: 1e-10,
            rcond: DEFAULT_RCOND,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "gate threshold must be positive, got {}",
                self.eta
            )));
        }
        if !(self.radius > 0.0 && self.radius <= self.outer_radius) {
            return Err(ModelError::InvalidParameter(format!(
                "need 0 < R <= R0, got R = {}, R0 = {}",
                self.radius, self.outer_radius
            )));
        }
        if self.max_iterations == 0 || !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(ModelError::InvalidParameter(
                "iteration limit and tolerance must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rcond) {
            return Err(ModelError::InvalidParameter(format!(
                "rcond must lie in [0, 1), got {}",
                self.rcond
            )));
        }
        Ok(())
    }
}

/// Diagnostics of one Picard run.
#[derive(Clone, Debug)]
pub struct FixedPointReport {
    /// Number of Phi applications performed.
    pub iterations: usize,
    /// C^0 H^s increment per iteration.
    pub increments: Vec<f64>,
    /// Ratios of successive increments (from the second iteration on).
    pub contraction_factors: Vec<f64>,
    pub converged: bool,
    /// How far the result is from solving its own Duhamel equation.
    pub duhamel_residual: f64,
    /// `|| Pi C w - Pi g ||` in the trace norm.
    pub observation_residual: f64,
}

impl FixedPointReport {
    pub fn last_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(0.0)
    }

    /// Empirical contraction factor: the largest ratio among iterations
    /// whose increments sit clear of the rounding floor.
    pub fn kappa(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, &f) in self.contraction_factors.iter().enumerate() {
            if self.increments[i] > 1e-13 && self.increments[i + 1] > 1e-13 {
                best = Some(best.map_or(f, |b: f64| b.max(f)));
            }
        }
        best
    }
}

/// A prepared fixed-point problem: the observed Cauchy solver is assembled
/// once, the source baseline `-i f(v) + h` is precomputed per node, and
/// each Phi application costs one Taylor-remainder sweep plus one solve.
pub struct ReconstructionProblem {
    solver: ObservedCauchySolver,
    split: FrequencySplit,
    window: ObservationWindow,
    scale: SobolevScale,
    v: PotentialPath,
    nl: NonlinearitySpec,
    cfg: ReconstructionConfig,
    g: ObservedTrace,
    base: PotentialPath,
}

impl ReconstructionProblem {
    pub fn new(
        split: &FrequencySplit,
        v: &PotentialPath,
        window: &ObservationWindow,
        g: &ObservedTrace,
        h: Option<&PotentialPath>,
        nl: &NonlinearitySpec,
        cfg: &ReconstructionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let scale = g.scale().clone();
        let solver = ObservedCauchySolver::new(split, window, &scale, v, nl, cfg.rcond)?;
        solver.operator().check_trace(g)?;
        if let Some(h) = h {
            check_same(h.geometry(), v.geometry(), "fixed-point source")?;
            if h.node_count() != v.node_count() {
                return Err(ModelError::InputShape {
                    what: "source path nodes",
                    expected: v.node_count(),
                    actual: h.node_count(),
                });
            }
        }
        let minus_i = C64::new(0.0, -1.0);
        let mut nodes = Vec::with_capacity(v.node_count());
        for (j, vn) in v.nodes().iter().enumerate() {
            let mut node = nl.eval_f(vn).scaled(minus_i);
            if let Some(h) = h {
                node.axpy(C64::new(1.0, 0.0), h.node(j));
            }
            nodes.push(node);
        }
        let base = PotentialPath::new(nodes, v.horizon())?;
        Ok(ReconstructionProblem {
            solver,
            split: split.clone(),
            window: window.clone(),
            scale,
            v: v.clone(),
            nl: nl.clone(),
            cfg: cfg.clone(),
            g: g.clone(),
            base,
        })
    }

    pub fn solver(&self) -> &ObservedCauchySolver {
        &self.solver
    }

    pub fn config(&self) -> &ReconstructionConfig {
        &self.cfg
    }

    fn source_for(&self, w: &PotentialPath) -> Result<PotentialPath> {
        let minus_i = C64::new(0.0, -1.0);
        let mut nodes = Vec::with_capacity(self.v.node_count());
        for (j, (vn, wn)) in self.v.nodes().iter().zip(w.nodes()).enumerate() {
            let mut node = self.base.node(j).clone();
            if !self.nl.is_zero() {
                node.axpy(minus_i, &self.nl.eval_h(vn, wn)?);
            }
            nodes.push(node);
        }
        PotentialPath::new(nodes, self.v.horizon())
    }

    /// One application of Phi.
    pub fn apply_phi(&self, w: &PotentialPath) -> Result<PotentialPath> {
        check_same(w.geometry(), self.v.geometry(), "fixed-point iterate")?;
        if w.node_count() != self.v.node_count() {
            return Err(ModelError::InputShape {
                what: "iterate nodes",
                expected: self.v.node_count(),
                actual: w.node_count(),
            });
        }
        if !w.is_high_band(&self.split, 1e-10)? {
            return Err(ModelError::Precondition(
                "fixed-point iterates must be high-band valued".into(),
            ));
        }
        let source = self.source_for(w)?;
        let (_, traj) = self.solver.solve(&self.g, Some(&source))?;
        Ok(traj)
    }

    /// Picard iteration from `start` (zero when absent) until the C^0 H^s
    /// increment drops below the tolerance. Non-convergence is a typed
    /// error carrying the same report.
    pub fn fixed_point(
        &self,
        start: Option<&PotentialPath>,
    ) -> Result<(PotentialPath, FixedPointReport)> {
        let geom = self.v.geometry();
        let mut w = match start {
            Some(w) => w.clone(),
            None => PotentialPath::zero(geom, self.v.horizon(), self.v.node_count())?,
        };
        let mut increments = Vec::new();
        let mut converged = false;
        for _ in 0..self.cfg.max_iterations {
            let next = self.apply_phi(&w)?;
            let inc = next.sub(&w)?.sup_norm(&self.scale)?;
            increments.push(inc);
            w = next;
            if inc <= self.cfg.tolerance {
                converged = true;
                break;
            }
            // runaway iterates mean the map is expanding here; stop before
            // the Taylor remainder overflows and report the failure typed
            if !inc.is_finite() || inc > DIVERGENCE_GUARD {
                break;
            }
        }
        let contraction_factors = increments
            .windows(2)
            .map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 })
            .collect();

        // independent residuals: the Duhamel equation driven by w's own
        // initial value, and the projected observation identity
        let source = self.source_for(&w)?;
        let replay = crate::evolve::evolve_with_source(
            &self.split,
            &self.v,
            w.node(0),
            0.0,
            &source,
            &self.nl,
        )?;
        let duhamel_residual = w.sub(&replay)?.sup_norm(&self.scale)?;
        let trace_w = observe_path(&w, &self.window, &self.scale)?;
        let observation_residual = apply_projector(
            &trace_w.sub(&self.g)?,
            self.solver.operator(),
            self.solver.inverse(),
        )?
        .l2_norm();

        let report = FixedPointReport {
            iterations: increments.len(),
            increments,
            contraction_factors,
            converged,
            duhamel_residual,
            observation_residual,
        };
        if !report.converged {
            return Err(ModelError::ContractionFailure {
                report: Box::new(report),
            });
        }
        Ok((w, report))
    }
}

/// One application of Phi without keeping the assembled problem.
#[allow(clippy::too_many_arguments)]
pub fn phi_map(
    split: &FrequencySplit,
    v: &PotentialPath,
    window: &ObservationWindow,
    g: &ObservedTrace,
    h: Option<&PotentialPath>,
    w: &PotentialPath,
    nl: &NonlinearitySpec,
    cfg: &ReconstructionConfig,
) -> Result<PotentialPath> {
    ReconstructionProblem::new(split, v, window, g, h, nl, cfg)?.apply_phi(w)
}

/// Assembles the problem and runs the Picard iteration from zero.
pub fn fixed_point_solve(
    split: &FrequencySplit,
    v: &PotentialPath,
    window: &ObservationWindow,
    g: &ObservedTrace,
    h: Option<&PotentialPath>,
    nl: &NonlinearitySpec,
    cfg: &ReconstructionConfig,
) -> Result<(PotentialPath, FixedPointReport)> {
    ReconstructionProblem::new(split, v, window, g, h, nl, cfg)?.fixed_point(None)
}

/// The gated reconstruction operator: solves the fixed point for the
/// potential `v_low + h1` and source `h2`, against the gated observation
/// `g = -chi(||C v_low|| / eta) C v_low`.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    split: &FrequencySplit,
    v_low: &PotentialPath,
    h1: &PotentialPath,
    h2: &PotentialPath,
    window: &ObservationWindow,
    nl: &NonlinearitySpec,
    cfg: &ReconstructionConfig,
    scale: &SobolevScale,
) -> Result<PotentialPath> {
    cfg.validate()?;
    for node in v_low.nodes() {
        if !split.is_low_band(node, 1e-10)? {
            return Err(ModelError::Precondition(
                "the reconstruction potential must be low-band valued".into(),
            ));
        }
    }
    let trace_v = observe_path(v_low, window, scale)?;
    let factor = -gate(trace_v.l2_norm() / cfg.eta);
    let g = trace_v.scaled(C64::new(factor, 0.0));
    let v = v_low.add(h1)?;
    let (w, _) = fixed_point_solve(split, &v, window, &g, Some(h2), nl, cfg)?;
    Ok(w)
}

/// Outcome of replaying a stored trajectory through the reconstruction.
#[derive(Clone, Debug)]
pub enum VerifyOutcome {
    Completed {
        /// `||w - Q_n u|| / ||Q_n u||` in C^0 H^s.
        relative_error: f64,
        /// `||Q_n u||_{C^0 H^s}` of the target.
        high_band_sup: f64,
        report: FixedPointReport,
    },
    /// The trajectory sits outside the solver's validity ball; a larger
    /// split rank shrinks both offending quantities.
    PreconditionsNotMet {
        observation_norm: f64,
        eta: f64,
        high_band_sup: f64,
        radius: f64,
    },
}

/// Splits a stored trajectory, solves the fixed point against the
/// generalized observation `g = C Q_n u` with the low band as potential,
/// and reports the relative recovery error of the high band.
pub fn verify_reconstruction(
    u_traj: &PotentialPath,
    split: &FrequencySplit,
    window: &ObservationWindow,
    nl: &NonlinearitySpec,
    cfg: &ReconstructionConfig,
    scale: &SobolevScale,
) -> Result<VerifyOutcome> {
    cfg.validate()?;
    let v_low = u_traj.project_low(split)?;
    let q = u_traj.project_high(split)?;
    let g = observe_path(&q, window, scale)?;
    let observation_norm = g.l2_norm();
    let high_band_sup = q.sup_norm(scale)?;
    if observation_norm > cfg.eta || high_band_sup > cfg.radius {
        return Ok(VerifyOutcome::PreconditionsNotMet {
            observation_norm,
            eta: cfg.eta,
            high_band_sup,
            radius: cfg.radius,
        });
    }
    let (w, report) = fixed_point_solve(split, &v_low, window, &g, None, nl, cfg)?;
    let err = w.sub(&q)?.sup_norm(scale)?;
    let relative_error = if high_band_sup > 0.0 {
        err / high_band_sup
    } else {
        err
    };
    Ok(VerifyOutcome::Completed {
        relative_error,
        high_band_sup,
        report,
    })
}

/// The three norms of the determining-modes comparison.
#[derive(Clone, Debug)]
pub struct GapReport {
    /// `||u1 - u2||_{C^0 H^s}`.
    pub state_gap: f64,
    /// `||C(u1 - u2)||_{L^2 H^s}`.
    pub observation_gap: f64,
    /// `||P_n(u1 - u2)||_{C^0 H^s}`.
    pub low_mode_gap: f64,
}

/// Measures how far two trajectories are in state, in observation, and in
/// their low bands; the stability estimate bounds the first by the other
/// two plus a quadratic term.
pub fn determining_modes_gap(
    u1: &PotentialPath,
    u2: &PotentialPath,
    split: &FrequencySplit,
    window: &ObservationWindow,
    scale: &SobolevScale,
) -> Result<GapReport> {
    let diff = u1.sub(u2)?;
    Ok(GapReport {
        state_gap: diff.sup_norm(scale)?,
        observation_gap: observe_path(&diff, window, scale)?.l2_norm(),
        low_mode_gap: diff.project_low(split)?.sup_norm(scale)?,
    })
}
