//! Observed traces, the observability Gramian and its inverse, the range
//! projector, and the observed Cauchy solver.
//!
//! Everything here lives in weighted real coordinates. A high-band state w
//! is flattened to 2m reals, mode-wise (Re, Im) pairs scaled by
//! `(1 + lambda)^{s/2}`, so the Euclidean inner product is the real H^s
//! pairing and adjoints are plain transposes. A trace is flattened the same
//! way per time node with an extra `sqrt(quadrature weight)` per node, so
//! Euclidean pairings of trace coordinates realize the trapezoid
//! discretization of the L^2([0,T], H^s) pairing. The Gramian G = O^T O is
//! then exactly the quadrature of  t -> ||C S(t,0) w||_{H^s}^2,  and its
//! smallest eigenvalue yields the observability constant
//! `C_obs = lambda_min^{-1/2}`.
//!
//! Inversion goes through the eigendecomposition of the small symmetric G;
//! a smallest eigenvalue at or below `rcond * lambda_max` is reported as a
//! typed failure carrying lambda_min (the sign of a window violating the
//! geometric control condition, or of a split rank below the observability
//! threshold) rather than regularized away.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};
use crate::evolve::{LinearizedStepper, StepScratch};
use crate::field::SpectralField;
use crate::geometry::{check_same, TorusGeometry};
use crate::nonlinearity::NonlinearitySpec;
use crate::path::PotentialPath;
use crate::sobolev::{sobolev_norm, SobolevScale};
use crate::split::FrequencySplit;
use crate::window::ObservationWindow;
use crate::C64;

/// Relative eigenvalue threshold below which a Gramian counts as singular.
pub const DEFAULT_RCOND: f64 = 1e-10;

const TIME_TOL: f64 = 1e-9;

/// Composite trapezoid weights on a uniform grid; they sum to the horizon.
fn node_weights(node_count: usize, horizon: f64) -> Vec<f64> {
    let dt = horizon / (node_count - 1) as f64;
    (0..node_count)
        .map(|j| {
            if j == 0 || j == node_count - 1 {
                dt / 2.0
            } else {
                dt
            }
        })
        .collect()
}

/// Writes the weighted real coordinates of the windowed state into `out`
/// (length 2 N_tot), using `buf` as FFT workspace.
fn windowed_coords(
    geom: &TorusGeometry,
    b: &[f64],
    half: &[f64],
    state: &[C64],
    scl: f64,
    out: &mut [f64],
    buf: &mut [C64],
) {
    buf.copy_from_slice(state);
    geom.fft_inverse(buf);
    for (z, &bv) in buf.iter_mut().zip(b) {
        *z *= bv;
    }
    geom.fft_forward(buf);
    let invn = scl / geom.n_total() as f64;
    for (bin, z) in buf.iter().enumerate() {
        let f = invn * half[bin];
        out[2 * bin] = f * z.re;
        out[2 * bin + 1] = f * z.im;
    }
}

/// A time-sampled observed trace `t_j -> C w(t_j)` with its trapezoid
/// quadrature weights.
#[derive(Clone, Debug)]
pub struct ObservedTrace {
    fields: Vec<SpectralField>,
    horizon: f64,
    scale: SobolevScale,
}

impl ObservedTrace {
    pub fn new(fields: Vec<SpectralField>, horizon: f64, scale: &SobolevScale) -> Result<Self> {
        if fields.len() < 2 {
            return Err(ModelError::InvalidParameter(format!(
                "a trace needs at least two nodes, got {}",
                fields.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "trace horizon must be positive, got {horizon}"
            )));
        }
        for f in &fields {
            check_same(f.geometry(), scale.geometry(), "trace node")?;
        }
        Ok(ObservedTrace {
            fields,
            horizon,
            scale: scale.clone(),
        })
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        self.scale.geometry()
    }

    pub fn scale(&self) -> &SobolevScale {
        &self.scale
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.fields.len()
    }

    pub fn node(&self, j: usize) -> &SpectralField {
        &self.fields[j]
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn weights(&self) -> Vec<f64> {
        node_weights(self.fields.len(), self.horizon)
    }

    /// Trapezoid L^2([0,T], H^s) norm.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for (f, w) in self.fields.iter().zip(self.weights()) {
            let nrm = sobolev_norm(f, &self.scale).expect("trace nodes share the scale geometry");
            acc += w * nrm * nrm;
        }
        acc.sqrt()
    }

    fn check_compatible(&self, other: &ObservedTrace) -> Result<()> {
        check_same(self.geometry(), other.geometry(), "trace pair")?;
        if self.fields.len() != other.fields.len() {
            return Err(ModelError::InputShape {
                what: "trace nodes",
                expected: self.fields.len(),
                actual: other.fields.len(),
            });
        }
        if (self.horizon - other.horizon).abs() > TIME_TOL * self.horizon.max(1.0)
            || self.scale.exponent() != other.scale.exponent()
        {
            return Err(ModelError::GeometryMismatch(
                "trace horizons or Sobolev exponents differ".into(),
            ));
        }
        Ok(())
    }

    pub fn sub(&self, other: &ObservedTrace) -> Result<ObservedTrace> {
        self.check_compatible(other)?;
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservedTrace {
            fields,
            horizon: self.horizon,
            scale: self.scale.clone(),
        })
    }

    pub fn add(&self, other: &ObservedTrace) -> Result<ObservedTrace> {
        self.check_compatible(other)?;
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservedTrace {
            fields,
            horizon: self.horizon,
            scale: self.scale.clone(),
        })
    }

    pub fn scaled(&self, alpha: C64) -> ObservedTrace {
        ObservedTrace {
            fields: self.fields.iter().map(|f| f.scaled(alpha)).collect(),
            horizon: self.horizon,
            scale: self.scale.clone(),
        }
    }

    /// Stacked weighted real coordinates; Euclidean inner products of these
    /// vectors realize the trapezoid L^2 H^s pairing.
    pub fn coords(&self) -> DVector<f64> {
        let n = self.geometry().n_total();
        let half = self.scale.half_weights();
        let mut out = DVector::zeros(self.fields.len() * 2 * n);
        for (j, (f, w)) in self.fields.iter().zip(self.weights()).enumerate() {
            let scl = w.sqrt();
            let base = j * 2 * n;
            for (bin, c) in f.coefficients().iter().enumerate() {
                let v = c * (scl * half[bin]);
                out[base + 2 * bin] = v.re;
                out[base + 2 * bin + 1] = v.im;
            }
        }
        out
    }
}

/// Applies the window to every node of a trajectory.
pub fn observe_path(
    path: &PotentialPath,
    window: &ObservationWindow,
    scale: &SobolevScale,
) -> Result<ObservedTrace> {
    check_same(path.geometry(), window.geometry(), "observed path")?;
    let fields = path
        .nodes()
        .iter()
        .map(|u| window.apply(u))
        .collect::<Result<Vec<_>>>()?;
    ObservedTrace::new(fields, path.horizon(), scale)
}

/// The assembled observation operator `O: w0 -> C S(., 0) w0` mapping
/// high-band real coordinates to stacked weighted trace coordinates.
/// Column 2j (respectively 2j + 1) is the observed trace of the linearized
/// evolution of the real (imaginary) H^s-unit basis vector of the j-th
/// high-band mode.
pub struct ObservationOperator {
    split: FrequencySplit,
    window: ObservationWindow,
    scale: SobolevScale,
    potential: PotentialPath,
    nl: NonlinearitySpec,
    stepper: LinearizedStepper,
    matrix: DMatrix<f64>,
}

fn check_assembly_inputs(
    split: &FrequencySplit,
    window: &ObservationWindow,
    scale: &SobolevScale,
    v: &PotentialPath,
) -> Result<()> {
    check_same(split.geometry(), window.geometry(), "observation window")?;
    check_same(split.geometry(), scale.geometry(), "observation scale")?;
    check_same(split.geometry(), v.geometry(), "observation potential")?;
    if split.high_dim() == 0 {
        return Err(ModelError::InvalidParameter(
            "the split leaves no high-band modes to observe".into(),
        ));
    }
    Ok(())
}

/// The real H^s-unit basis state for real column index `c`.
fn basis_state(split: &FrequencySplit, scale: &SobolevScale, c: usize) -> Vec<C64> {
    let bin = split.high_bins()[c / 2];
    let amp = 1.0 / scale.half_weight(bin);
    let mut w0 = vec![C64::default(); split.geometry().n_total()];
    w0[bin] = if c % 2 == 0 {
        C64::new(amp, 0.0)
    } else {
        C64::new(0.0, amp)
    };
    w0
}

impl ObservationOperator {
    /// Marches one linearized trajectory per high-band basis vector
    /// (columns in parallel) and stores the full trace matrix.
    pub fn assemble(
        split: &FrequencySplit,
        window: &ObservationWindow,
        scale: &SobolevScale,
        v: &PotentialPath,
        nl: &NonlinearitySpec,
    ) -> Result<Self> {
        check_assembly_inputs(split, window, scale, v)?;
        let stepper = LinearizedStepper::new(split, v, nl)?;
        let geom = split.geometry().clone();
        let n = geom.n_total();
        let cols = 2 * split.high_dim();
        let node_count = stepper.steps() + 1;
        let rows = node_count * 2 * n;
        let wts = node_weights(node_count, v.horizon());

        let mut data = vec![0.0f64; rows * cols];
        data.par_chunks_mut(rows).enumerate().for_each_init(
            || vec![C64::default(); n],
            |buf, (c, col)| {
                let w0 = basis_state(split, scale, c);
                stepper.march_observed(&w0, |jn, st| {
                    windowed_coords(
                        &geom,
                        window.samples(),
                        scale.half_weights(),
                        st,
                        wts[jn].sqrt(),
                        &mut col[jn * 2 * n..(jn + 1) * 2 * n],
                        buf,
                    );
                });
            },
        );

        Ok(ObservationOperator {
            split: split.clone(),
            window: window.clone(),
            scale: scale.clone(),
            potential: v.clone(),
            nl: nl.clone(),
            stepper,
            matrix: DMatrix::from_vec(rows, cols, data),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn split(&self) -> &FrequencySplit {
        &self.split
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn scale(&self) -> &SobolevScale {
        &self.scale
    }

    pub fn potential(&self) -> &PotentialPath {
        &self.potential
    }

    pub fn node_count(&self) -> usize {
        self.stepper.steps() + 1
    }

    pub fn horizon(&self) -> f64 {
        self.potential.horizon()
    }

    /// Weighted real coordinates of the high band of `u` (low bins are
    /// ignored).
    pub fn high_coords(&self, u: &SpectralField) -> Result<DVector<f64>> {
        check_same(u.geometry(), self.split.geometry(), "high-band coords")?;
        let mut y = DVector::zeros(2 * self.split.high_dim());
        for (j, &bin) in self.split.high_bins().iter().enumerate() {
            let c = u.coefficients()[bin] * self.scale.half_weight(bin);
            y[2 * j] = c.re;
            y[2 * j + 1] = c.im;
        }
        Ok(y)
    }

    /// Inverse of [`Self::high_coords`].
    pub fn field_from_high_coords(&self, y: &DVector<f64>) -> SpectralField {
        let geom = self.split.geometry();
        let mut coef = vec![C64::default(); geom.n_total()];
        for (j, &bin) in self.split.high_bins().iter().enumerate() {
            coef[bin] = C64::new(y[2 * j], y[2 * j + 1]) / self.scale.half_weight(bin);
        }
        SpectralField::from_coefficients(geom, coef).expect("coords are finite")
    }

    fn trace_from_coords(&self, t: &DVector<f64>) -> ObservedTrace {
        let geom = self.split.geometry();
        let n = geom.n_total();
        let node_count = self.node_count();
        let wts = node_weights(node_count, self.horizon());
        let half = self.scale.half_weights();
        let mut fields = Vec::with_capacity(node_count);
        for j in 0..node_count {
            let base = j * 2 * n;
            let scl = 1.0 / wts[j].sqrt();
            let coef: Vec<C64> = (0..n)
                .map(|bin| C64::new(t[base + 2 * bin], t[base + 2 * bin + 1]) * (scl / half[bin]))
                .collect();
            fields.push(
                SpectralField::from_coefficients(geom, coef).expect("trace coords are finite"),
            );
        }
        ObservedTrace {
            fields,
            horizon: self.horizon(),
            scale: self.scale.clone(),
        }
    }

    pub(crate) fn check_trace(&self, g: &ObservedTrace) -> Result<()> {
        check_same(g.geometry(), self.split.geometry(), "trace data")?;
        if g.node_count() != self.node_count() {
            return Err(ModelError::InputShape {
                what: "trace nodes",
                expected: self.node_count(),
                actual: g.node_count(),
            });
        }
        if (g.horizon() - self.horizon()).abs() > TIME_TOL * self.horizon().max(1.0)
            || g.scale().exponent() != self.scale.exponent()
        {
            return Err(ModelError::GeometryMismatch(
                "trace grid or Sobolev exponent does not match the operator".into(),
            ));
        }
        Ok(())
    }

    /// `O w0` through the assembled matrix.
    pub fn apply(&self, w0: &SpectralField) -> Result<ObservedTrace> {
        let tol = 1e-12 * w0.l2_norm();
        if !self.split.is_high_band(w0, tol)? {
            return Err(ModelError::Precondition(
                "observation input must be high-band valued".into(),
            ));
        }
        let y = self.high_coords(w0)?;
        Ok(self.trace_from_coords(&(&self.matrix * y)))
    }

    /// `O^T g` in the weighted geometry: a high-band field.
    pub fn adjoint_apply(&self, g: &ObservedTrace) -> Result<SpectralField> {
        self.check_trace(g)?;
        Ok(self.field_from_high_coords(&self.matrix.tr_mul(&g.coords())))
    }

    /// `G = O^T O` with the operator's own metadata attached.
    pub fn gramian(&self) -> GramianOperator {
        GramianOperator::new(
            self.matrix.tr_mul(&self.matrix),
            self.split.clone(),
            self.window.clone(),
            self.scale.clone(),
            self.potential.clone(),
            self.nl.clone(),
        )
    }

    pub(crate) fn homogeneous_march(&self, w0: &SpectralField) -> Result<PotentialPath> {
        self.stepper.propagate(w0, 0, None)
    }

    pub(crate) fn source_march(&self, h: &PotentialPath) -> Result<PotentialPath> {
        let zero = SpectralField::zero(self.split.geometry());
        self.stepper.propagate(&zero, 0, Some(h))
    }
}

/// Assembles `G = O^T O` without storing O: all columns are marched in
/// lockstep and per-node coordinate blocks are accumulated by symmetric
/// rank updates. Preferred at large truncation, where O itself would
/// dominate memory.
pub fn assemble_gramian_direct(
    split: &FrequencySplit,
    window: &ObservationWindow,
    scale: &SobolevScale,
    v: &PotentialPath,
    nl: &NonlinearitySpec,
) -> Result<GramianOperator> {
    check_assembly_inputs(split, window, scale, v)?;
    let stepper = LinearizedStepper::new(split, v, nl)?;
    let geom = split.geometry().clone();
    let n = geom.n_total();
    let cols = 2 * split.high_dim();
    let node_count = stepper.steps() + 1;
    let wts = node_weights(node_count, v.horizon());

    let mut states: Vec<Vec<C64>> = (0..cols).map(|c| basis_state(split, scale, c)).collect();
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    let mut block = DMatrix::<f64>::zeros(2 * n, cols);
    for j in 0..node_count {
        block
            .as_mut_slice()
            .par_chunks_mut(2 * n)
            .zip(states.par_iter())
            .for_each_init(
                || vec![C64::default(); n],
                |buf, (col, st)| {
                    windowed_coords(
                        &geom,
                        window.samples(),
                        scale.half_weights(),
                        st,
                        1.0,
                        col,
                        buf,
                    );
                },
            );
        gram.gemm_tr(wts[j], &block, &block, 1.0);
        if j + 1 < node_count {
            states.par_iter_mut().for_each_init(
                || StepScratch::new(n),
                |scr, st| stepper.step_once(st, j, None, scr),
            );
        }
    }
    Ok(GramianOperator::new(
        gram,
        split.clone(),
        window.clone(),
        scale.clone(),
        v.clone(),
        nl.clone(),
    ))
}

/// The observability Gramian with its sorted eigendecomposition and the
/// data that generated it.
#[derive(Clone, Debug)]
pub struct GramianOperator {
    matrix: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    split: FrequencySplit,
    window: ObservationWindow,
    scale: SobolevScale,
    potential: PotentialPath,
    nl: NonlinearitySpec,
}

impl GramianOperator {
    pub(crate) fn new(
        matrix: DMatrix<f64>,
        split: FrequencySplit,
        window: ObservationWindow,
        scale: SobolevScale,
        potential: PotentialPath,
        nl: NonlinearitySpec,
    ) -> Self {
        let dim = matrix.nrows();
        let es = SymmetricEigen::new(matrix.clone());
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.sort_by(|&a, &b| es.eigenvalues[a].total_cmp(&es.eigenvalues[b]));
        let eigenvalues: Vec<f64> = idx.iter().map(|&i| es.eigenvalues[i]).collect();
        let eigenvectors = DMatrix::from_fn(dim, dim, |r, c| es.eigenvectors[(r, idx[c])]);
        GramianOperator {
            matrix,
            eigenvalues,
            eigenvectors,
            split,
            window,
            scale,
            potential,
            nl,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("Gramians are nonempty")
    }

    pub fn split(&self) -> &FrequencySplit {
        &self.split
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn scale(&self) -> &SobolevScale {
        &self.scale
    }

    pub fn potential(&self) -> &PotentialPath {
        &self.potential
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.nl
    }

    /// `C_obs = lambda_min^{-1/2}`, the smallest constant with
    /// `||w0||^2 <= C_obs^2 <G w0, w0>` on the high band.
    pub fn observability_constant(&self) -> Result<f64> {
        let lm = self.lambda_min();
        if lm <= 0.0 {
            return Err(ModelError::ObservabilityFailure {
                lambda_min: lm,
                threshold: 0.0,
            });
        }
        Ok(1.0 / lm.sqrt())
    }

    /// Exact inverse through the eigendecomposition; fails (typed, with
    /// lambda_min attached) when the Gramian is numerically singular.
    pub fn inverse(&self, rcond: f64) -> Result<GramianInverse> {
        if !(0.0..1.0).contains(&rcond) {
            return Err(ModelError::InvalidParameter(format!(
                "rcond must lie in [0, 1), got {rcond}"
            )));
        }
        let threshold = rcond * self.lambda_max().max(0.0);
        let lm = self.lambda_min();
        if lm <= threshold || lm <= 0.0 {
            return Err(ModelError::ObservabilityFailure {
                lambda_min: lm,
                threshold,
            });
        }
        let mut scaled = self.eigenvectors.clone();
        for (i, &l) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(i).scale_mut(1.0 / l);
        }
        Ok(GramianInverse {
            matrix: scaled * self.eigenvectors.transpose(),
        })
    }
}

/// `G^{-1}` on high-band real coordinates.
#[derive(Clone, Debug)]
pub struct GramianInverse {
    matrix: DMatrix<f64>,
}

impl GramianInverse {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.matrix * y
    }
}

/// The range projector `Pi = O G^{-1} O^T` on weighted trace coordinates.
pub fn apply_projector(
    trace: &ObservedTrace,
    op: &ObservationOperator,
    inv: &GramianInverse,
) -> Result<ObservedTrace> {
    op.check_trace(trace)?;
    let y = op.matrix.tr_mul(&trace.coords());
    Ok(op.trace_from_coords(&(&op.matrix * inv.apply(&y))))
}

/// The observed Cauchy solver: assembles O, G, and G^{-1} once for a fixed
/// potential path, then answers (g, h) -> (w0, trajectory) queries with two
/// linearized marches and dense linear algebra.
pub struct ObservedCauchySolver {
    op: ObservationOperator,
    gram: GramianOperator,
    inv: GramianInverse,
}

impl ObservedCauchySolver {
    pub fn new(
        split: &FrequencySplit,
        window: &ObservationWindow,
        scale: &SobolevScale,
        v: &PotentialPath,
        nl: &NonlinearitySpec,
        rcond: f64,
    ) -> Result<Self> {
        let op = ObservationOperator::assemble(split, window, scale, v, nl)?;
        let gram = op.gramian();
        let inv = gram.inverse(rcond)?;
        Ok(ObservedCauchySolver { op, gram, inv })
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.op
    }

    pub fn gramian(&self) -> &GramianOperator {
        &self.gram
    }

    pub fn inverse(&self) -> &GramianInverse {
        &self.inv
    }

    /// Projects the data onto what is observable and solves for the
    /// high-band Cauchy datum:
    ///
    /// ```text
    ///     w0 = G^{-1} O^T [ g - C I_v(.) Q_n h ],
    ///     w(t) = S(t, 0) w0 + I_v(t) Q_n h,
    /// ```
    ///
    /// where `I_v` is the inhomogeneous propagator from zero data. The
    /// returned trajectory satisfies `Pi C w = Pi g` up to the solve
    /// residual.
    pub fn solve(
        &self,
        g: &ObservedTrace,
        h: Option<&PotentialPath>,
    ) -> Result<(SpectralField, PotentialPath)> {
        self.op.check_trace(g)?;
        let (xi, forced) = match h {
            Some(h) => {
                let z = self.op.source_march(h)?;
                let trace_z = observe_path(&z, &self.op.window, &self.op.scale)?;
                (g.sub(&trace_z)?, Some(z))
            }
            None => (g.clone(), None),
        };
        let rhs = self.op.matrix.tr_mul(&xi.coords());
        let w0 = self.op.field_from_high_coords(&self.inv.apply(&rhs));
        let mut trajectory = self.op.homogeneous_march(&w0)?;
        if let Some(z) = forced {
            trajectory.axpy(C64::new(1.0, 0.0), &z)?;
        }
        Ok((w0, trajectory))
    }
}

/// One-shot version of [`ObservedCauchySolver`] with the default rcond.
pub fn solve_observed_cauchy(
    split: &FrequencySplit,
    v: &PotentialPath,
    window: &ObservationWindow,
    g: &ObservedTrace,
    h: Option<&PotentialPath>,
    nl: &NonlinearitySpec,
    scale: &SobolevScale,
) -> Result<(SpectralField, PotentialPath)> {
    ObservedCauchySolver::new(split, window, scale, v, nl, DEFAULT_RCOND)?.solve(g, h)
}

fn push_floats(line: &mut String, vals: &[f64]) {
    for v in vals {
        line.push_str(&format!(" {v:.16e}"));
    }
}

/// Canonical text descriptor of everything a Gramian depends on; its hash
/// keys the on-disk cache.
pub fn gramian_cache_descriptor(
    split: &FrequencySplit,
    window: &ObservationWindow,
    scale: &SobolevScale,
    v: &PotentialPath,
    nl: &NonlinearitySpec,
) -> String {
    let geom = split.geometry();
    let mut d = String::from("torobs gramian cache v1\n");
    d.push_str(&format!("dim {}\n", geom.dim()));
    d.push_str(&format!(
        "grid {}\n",
        geom.dims()
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    let mut line = String::from("lengths");
    push_floats(&mut line, geom.lengths());
    d.push_str(&line);
    d.push('\n');
    d.push_str(&format!("cutoff {}\n", split.cutoff()));
    d.push_str(&format!("scale {:.16e}\n", scale.exponent()));
    d.push_str(&format!("horizon {:.16e}\n", v.horizon()));
    d.push_str(&format!("nodes {}\n", v.node_count()));
    d.push_str(&format!("window regions {}\n", window.regions().len()));
    for (support, plateau) in window.regions() {
        let mut line = String::from("region");
        push_floats(&mut line, &support.lo);
        push_floats(&mut line, &support.hi);
        push_floats(&mut line, &plateau.lo);
        push_floats(&mut line, &plateau.hi);
        d.push_str(&line);
        d.push('\n');
    }
    let mut line = format!("nonlinearity defocusing={}", nl.is_defocusing());
    push_floats(&mut line, nl.coefficients());
    d.push_str(&line);
    d.push('\n');
    let mut hasher = Sha256::new();
    for node in v.nodes() {
        for c in node.coefficients() {
            hasher.update(c.re.to_le_bytes());
            hasher.update(c.im.to_le_bytes());
        }
    }
    d.push_str(&format!("potential sha256={:x}\n", hasher.finalize()));
    d
}

fn cache_file(dir: &Path, descriptor: &str) -> PathBuf {
    let mut hasher = Sha256::new();
    hasher.update(descriptor.as_bytes());
    dir.join(format!("{:x}.gram", hasher.finalize()))
}

/// Writes the Gramian under its content-hash key; returns the file path.
pub fn store_cached_gramian(dir: &Path, gram: &GramianOperator) -> Result<PathBuf> {
    let descriptor = gramian_cache_descriptor(
        &gram.split,
        &gram.window,
        &gram.scale,
        &gram.potential,
        &gram.nl,
    );
    std::fs::create_dir_all(dir)?;
    let path = cache_file(dir, &descriptor);
    let dim = gram.dim();
    let mut bytes = descriptor.into_bytes();
    bytes.extend_from_slice(format!("matrix {dim}\n").as_bytes());
    for r in 0..dim {
        for c in 0..dim {
            bytes.extend_from_slice(&gram.matrix[(r, c)].to_le_bytes());
        }
    }
    std::fs::write(&path, bytes)?;
    Ok(path)
}

/// Looks up the Gramian for the given generating data. Any mismatch
/// (absent file, different descriptor, short payload) is a miss, not an
/// error; the caller reassembles and stores.
pub fn load_cached_gramian(
    dir: &Path,
    split: &FrequencySplit,
    window: &ObservationWindow,
    scale: &SobolevScale,
    v: &PotentialPath,
    nl: &NonlinearitySpec,
) -> Result<Option<GramianOperator>> {
    let descriptor = gramian_cache_descriptor(split, window, scale, v, nl);
    let path = cache_file(dir, &descriptor);
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if !bytes.starts_with(descriptor.as_bytes()) {
        return Ok(None);
    }
    let rest = &bytes[descriptor.len()..];
    let header_end = match rest.iter().position(|&b| b == b'\n') {
        Some(p) => p,
        None => return Ok(None),
    };
    let dim = match std::str::from_utf8(&rest[..header_end])
        .ok()
        .and_then(|l| l.strip_prefix("matrix "))
        .and_then(|d| d.parse::<usize>().ok())
    {
        Some(d) => d,
        None => return Ok(None),
    };
    let payload = &rest[header_end + 1..];
    if dim != 2 * split.high_dim() || payload.len() != dim * dim * 8 {
        return Ok(None);
    }
    let mut matrix = DMatrix::<f64>::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            let off = (r * dim + c) * 8;
            let mut b = [0u8; 8];
            b.copy_from_slice(&payload[off..off + 8]);
            matrix[(r, c)] = f64::from_le_bytes(b);
        }
    }
    Ok(Some(GramianOperator::new(
        matrix,
        split.clone(),
        window.clone(),
        scale.clone(),
        v.clone(),
        nl.clone(),
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusGeometry;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn setup(
        n: usize,
        cutoff: usize,
        steps: usize,
    ) -> (
        FrequencySplit,
        ObservationWindow,
        SobolevScale,
        PotentialPath,
    ) {
        let geom = TorusGeometry::line(n).unwrap();
        let split = FrequencySplit::new(&geom, cutoff).unwrap();
        let window = ObservationWindow::uniform(&geom);
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let v = PotentialPath::zero(&geom, 0.5, steps + 1).unwrap();
        (split, window, scale, v)
    }

    fn random_high(split: &FrequencySplit, seed: u64) -> SpectralField {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut coef = vec![C64::default(); split.geometry().n_total()];
        for &bin in split.high_bins() {
            coef[bin] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        SpectralField::from_coefficients(split.geometry(), coef).unwrap()
    }

    #[test]
    fn free_flow_columns_are_isometric() {
        let (split, window, scale, v) = setup(16, 4, 10);
        let nl = NonlinearitySpec::none();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        for c in 0..op.matrix().ncols() {
            let nrm = op.matrix().column(c).norm_squared();
            assert!((nrm - 0.5).abs() < 1e-12, "column {c}: {nrm}");
        }
    }

    #[test]
    fn free_flow_gramian_is_horizon_times_identity() {
        let (split, window, scale, v) = setup(16, 4, 10);
        let nl = NonlinearitySpec::none();
        let gram = ObservationOperator::assemble(&split, &window, &scale, &v, &nl)
            .unwrap()
            .gramian();
        for r in 0..gram.dim() {
            for c in 0..gram.dim() {
                let want = if r == c { 0.5 } else { 0.0 };
                assert!((gram.matrix()[(r, c)] - want).abs() < 1e-13);
            }
        }
        let inv = gram.inverse(DEFAULT_RCOND).unwrap();
        assert!((inv.matrix()[(0, 0)] - 2.0).abs() < 1e-10);
        assert!((gram.observability_constant().unwrap() - 0.5f64.powf(-0.5)).abs() < 1e-10);
    }

    #[test]
    fn empty_window_fails_typed() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 4).unwrap();
        let window = ObservationWindow::new(&geom, Vec::new()).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let v = PotentialPath::zero(&geom, 0.5, 11).unwrap();
        let gram =
            ObservationOperator::assemble(&split, &window, &scale, &v, &NonlinearitySpec::none())
                .unwrap()
                .gramian();
        assert!(gram.lambda_max() < 1e-14);
        match gram.inverse(DEFAULT_RCOND) {
            Err(ModelError::ObservabilityFailure { lambda_min, .. }) => {
                assert!(lambda_min.abs() < 1e-12);
            }
            other => panic!("expected observability failure, got {other:?}"),
        }
    }

    #[test]
    fn direct_assembly_matches_operator_gramian() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 5).unwrap();
        let window = ObservationWindow::interval(&geom, (1.0, 4.0), (2.0, 3.0)).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let nl = NonlinearitySpec::cubic();
        let v0 = SpectralField::mode(&geom, &[1], C64::new(0.4, 0.1)).unwrap();
        let v = PotentialPath::constant(&v0, 0.5, 11).unwrap();
        let via_op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl)
            .unwrap()
            .gramian();
        let direct = assemble_gramian_direct(&split, &window, &scale, &v, &nl).unwrap();
        let diff = (via_op.matrix() - direct.matrix()).norm();
        assert!(
            diff <= 1e-12 * via_op.matrix().norm(),
            "gramian paths disagree by {diff}"
        );
    }

    #[test]
    fn quadratic_form_matches_trajectory_quadrature() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 5).unwrap();
        let window = ObservationWindow::interval(&geom, (1.0, 4.0), (2.0, 3.0)).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let nl = NonlinearitySpec::cubic();
        let v0 = SpectralField::mode(&geom, &[1], C64::new(0.3, -0.2)).unwrap();
        let v = PotentialPath::constant(&v0, 0.5, 11).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let gram = op.gramian();
        for seed in 0..10 {
            let w0 = random_high(&split, seed);
            let y = op.high_coords(&w0).unwrap();
            let qform = y.dot(&(gram.matrix() * &y));
            let traj = crate::evolve::evolve_linearized(&split, &v, &w0, 0.0, &nl).unwrap();
            let direct = observe_path(&traj, &window, &scale).unwrap().l2_norm();
            assert!(
                (qform - direct * direct).abs() <= 1e-9 * qform.max(1e-12),
                "seed {seed}: form {qform} vs quadrature {}",
                direct * direct
            );
        }
    }

    #[test]
    fn apply_matches_matrix_free_march() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 6).unwrap();
        let window = ObservationWindow::interval(&geom, (0.5, 5.0), (2.0, 3.5)).unwrap();
        let scale = SobolevScale::new(&geom, 1.5).unwrap();
        let nl = NonlinearitySpec::cubic();
        let v0 = SpectralField::mode(&geom, &[2], C64::new(0.2, 0.25)).unwrap();
        let v = PotentialPath::constant(&v0, 0.4, 9).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let w0 = random_high(&split, 42);
        let via_matrix = op.apply(&w0).unwrap();
        let traj = crate::evolve::evolve_linearized(&split, &v, &w0, 0.0, &nl).unwrap();
        let via_march = observe_path(&traj, &window, &scale).unwrap();
        let diff = via_matrix.sub(&via_march).unwrap().l2_norm();
        assert!(diff <= 1e-12 * via_march.l2_norm().max(1.0), "diff {diff}");
    }

    #[test]
    fn projector_is_orthogonal_and_fixes_the_range() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 6).unwrap();
        let window = ObservationWindow::interval(&geom, (1.0, 5.0), (2.0, 4.0)).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let nl = NonlinearitySpec::none();
        let v = PotentialPath::zero(&geom, 0.5, 9).unwrap();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let inv = op.gramian().inverse(DEFAULT_RCOND).unwrap();

        let w0 = random_high(&split, 7);
        let in_range = op.apply(&w0).unwrap();
        let fixed = apply_projector(&in_range, &op, &inv).unwrap();
        assert!(fixed.sub(&in_range).unwrap().l2_norm() <= 1e-9 * in_range.l2_norm());

        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let fields: Vec<SpectralField> = (0..op.node_count())
            .map(|_| {
                let coef: Vec<C64> = (0..geom.n_total())
                    .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                SpectralField::from_coefficients(&geom, coef).unwrap()
            })
            .collect();
        let g = ObservedTrace::new(fields, 0.5, &scale).unwrap();
        let once = apply_projector(&g, &op, &inv).unwrap();
        let twice = apply_projector(&once, &op, &inv).unwrap();
        assert!(twice.sub(&once).unwrap().l2_norm() <= 1e-9 * once.l2_norm().max(1.0));
    }

    #[test]
    fn solver_recovers_known_data() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 5).unwrap();
        let window = ObservationWindow::interval(&geom, (1.0, 5.5), (2.5, 4.0)).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let nl = NonlinearitySpec::cubic();
        let v0 = SpectralField::mode(&geom, &[1], C64::new(0.3, 0.0)).unwrap();
        let v = PotentialPath::constant(&v0, 0.5, 26).unwrap();
        let solver =
            ObservedCauchySolver::new(&split, &window, &scale, &v, &nl, DEFAULT_RCOND).unwrap();

        // homogeneous: g = O w0 recovers w0
        let w0 = random_high(&split, 3);
        let g = solver.operator().apply(&w0).unwrap();
        let (rec, traj) = solver.solve(&g, None).unwrap();
        assert!(rec.sub(&w0).unwrap().l2_norm() <= 1e-8 * w0.l2_norm());
        assert!(traj.node(0).sub(&w0).unwrap().l2_norm() <= 1e-8 * w0.l2_norm());

        // zero data: zero answer
        let zg = g.scaled(C64::default());
        let (rec0, traj0) = solver.solve(&zg, None).unwrap();
        assert!(rec0.l2_norm() <= 1e-12);
        assert!(traj0.sup_norm(&scale).unwrap() <= 1e-12);

        // manufactured inhomogeneous data
        let h0 = random_high(&split, 9).scaled(C64::new(0.2, 0.0));
        let h = PotentialPath::constant(&h0, 0.5, 26).unwrap();
        let forward = crate::evolve::evolve_with_source(&split, &v, &w0, 0.0, &h, &nl).unwrap();
        let g_in = observe_path(&forward, &window, &scale).unwrap();
        let (rec_in, traj_in) = solver.solve(&g_in, Some(&h)).unwrap();
        assert!(
            rec_in.sub(&w0).unwrap().l2_norm() <= 1e-7 * w0.l2_norm(),
            "recovered datum off by {}",
            rec_in.sub(&w0).unwrap().l2_norm()
        );
        let end_diff = traj_in.end().sub(forward.end()).unwrap().l2_norm();
        assert!(end_diff <= 1e-7 * forward.end().l2_norm().max(1.0));
    }

    #[test]
    fn adjoint_pairs_with_apply() {
        let (split, window, scale, v) = setup(16, 5, 8);
        let nl = NonlinearitySpec::none();
        let op = ObservationOperator::assemble(&split, &window, &scale, &v, &nl).unwrap();
        let w0 = random_high(&split, 21);
        let trace = op.apply(&w0).unwrap();
        let back = op.adjoint_apply(&trace).unwrap();
        // <O w, O w> = <w, O^T O w> in the weighted coordinates
        let lhs = trace.l2_norm().powi(2);
        let rhs = op
            .high_coords(&w0)
            .unwrap()
            .dot(&op.high_coords(&back).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
    }

    #[test]
    fn cache_round_trips_and_misses_on_changed_inputs() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 5).unwrap();
        let window = ObservationWindow::interval(&geom, (1.0, 4.0), (2.0, 3.0)).unwrap();
        let scale = SobolevScale::new(&geom, 1.0).unwrap();
        let nl = NonlinearitySpec::cubic();
        let v0 = SpectralField::mode(&geom, &[1], C64::new(0.2, 0.0)).unwrap();
        let v = PotentialPath::constant(&v0, 0.5, 9).unwrap();
        let gram = assemble_gramian_direct(&split, &window, &scale, &v, &nl).unwrap();

        let dir = tempfile::tempdir().unwrap();
        assert!(
            load_cached_gramian(dir.path(), &split, &window, &scale, &v, &nl)
                .unwrap()
                .is_none()
        );
        store_cached_gramian(dir.path(), &gram).unwrap();
        let loaded = load_cached_gramian(dir.path(), &split, &window, &scale, &v, &nl)
            .unwrap()
            .expect("stored gramian should hit");
        assert_eq!(loaded.matrix(), gram.matrix());

        // the key covers the nonlinearity: a different one must miss
        let other = NonlinearitySpec::quintic();
        assert!(
            load_cached_gramian(dir.path(), &split, &window, &scale, &v, &other)
                .unwrap()
                .is_none()
        );
    }
}
