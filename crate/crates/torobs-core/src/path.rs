//! Trajectories on a uniform time grid.
//!
//! A `PotentialPath` is the common currency of the toolkit: the nonlinear
//! flow records one, the linearized integrators both consume one (as the
//! frozen potential, whose grid is also the integration grid) and produce
//! one, and sources are passed the same way. Between nodes the path is
//! read by linear interpolation, which matches the integrators' own
//! accuracy order in the stage values.

use crate::error::{ModelError, Result};
use crate::field::SpectralField;
use crate::geometry::{check_same, TorusGeometry};
use crate::sobolev::{sobolev_norm, SobolevScale};
use crate::split::FrequencySplit;
use crate::C64;
use std::sync::Arc;

/// Relative slack accepted when matching times and horizons.
const TIME_TOL: f64 = 1e-9;

/// A time-sampled field trajectory on `[0, horizon]` with at least two
/// equally spaced nodes.
#[derive(Clone, Debug)]
pub struct PotentialPath {
    nodes: Vec<SpectralField>,
    horizon: f64,
}

impl PotentialPath {
    pub fn new(nodes: Vec<SpectralField>, horizon: f64) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(ModelError::InvalidParameter(format!(
                "a path needs at least two nodes, got {}",
                nodes.len()
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "path horizon must be positive, got {horizon}"
            )));
        }
        for node in &nodes[1..] {
            check_same(node.geometry(), nodes[0].geometry(), "path node")?;
        }
        Ok(PotentialPath { nodes, horizon })
    }

    /// A path holding the same field at every node.
    pub fn constant(field: &SpectralField, horizon: f64, node_count: usize) -> Result<Self> {
        PotentialPath::new(vec![field.clone(); node_count.max(2)], horizon)
    }

    pub fn zero(geom: &Arc<TorusGeometry>, horizon: f64, node_count: usize) -> Result<Self> {
        PotentialPath::constant(&SpectralField::zero(geom), horizon, node_count)
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        self.nodes[0].geometry()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_dt(&self) -> f64 {
        self.horizon / (self.nodes.len() - 1) as f64
    }

    pub fn node(&self, j: usize) -> &SpectralField {
        &self.nodes[j]
    }

    pub fn node_time(&self, j: usize) -> f64 {
        j as f64 * self.node_dt()
    }

    pub fn nodes(&self) -> &[SpectralField] {
        &self.nodes
    }

    pub fn end(&self) -> &SpectralField {
        self.nodes.last().expect("paths hold at least two nodes")
    }

    /// Linear interpolation at `t` in `[0, horizon]`.
    pub fn sample(&self, t: f64) -> Result<SpectralField> {
        let slack = TIME_TOL * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(ModelError::InvalidParameter(format!(
                "sample time {t} lies outside [0, {}]",
                self.horizon
            )));
        }
        let dt = self.node_dt();
        let j = ((t / dt).floor() as usize).min(self.nodes.len() - 2);
        let theta = ((t - j as f64 * dt) / dt).clamp(0.0, 1.0);
        if theta == 0.0 {
            return Ok(self.nodes[j].clone());
        }
        let mut out = self.nodes[j].scaled(C64::new(1.0 - theta, 0.0));
        out.axpy(C64::new(theta, 0.0), &self.nodes[j + 1]);
        Ok(out)
    }

    fn check_compatible(&self, other: &PotentialPath, what: &'static str) -> Result<()> {
        check_same(self.geometry(), other.geometry(), what)?;
        if self.nodes.len() != other.nodes.len() {
            return Err(ModelError::InputShape {
                what,
                expected: self.nodes.len(),
                actual: other.nodes.len(),
            });
        }
        if (self.horizon - other.horizon).abs() > TIME_TOL * self.horizon.max(1.0) {
            return Err(ModelError::GeometryMismatch(format!(
                "{what}: horizons {} and {} differ",
                self.horizon, other.horizon
            )));
        }
        Ok(())
    }

    /// In-place `self += alpha * other` node by node.
    pub fn axpy(&mut self, alpha: C64, other: &PotentialPath) -> Result<()> {
        self.check_compatible(other, "path axpy")?;
        for (a, b) in self.nodes.iter_mut().zip(&other.nodes) {
            a.axpy(alpha, b);
        }
        Ok(())
    }

    pub fn add(&self, other: &PotentialPath) -> Result<PotentialPath> {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &PotentialPath) -> Result<PotentialPath> {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other)?;
        Ok(out)
    }

    pub fn scaled(&self, alpha: C64) -> PotentialPath {
        PotentialPath {
            nodes: self.nodes.iter().map(|u| u.scaled(alpha)).collect(),
            horizon: self.horizon,
        }
    }

    pub fn project_low(&self, split: &FrequencySplit) -> Result<PotentialPath> {
        let nodes = self
            .nodes
            .iter()
            .map(|u| split.project_low(u))
            .collect::<Result<Vec<_>>>()?;
        Ok(PotentialPath {
            nodes,
            horizon: self.horizon,
        })
    }

    pub fn project_high(&self, split: &FrequencySplit) -> Result<PotentialPath> {
        let nodes = self
            .nodes
            .iter()
            .map(|u| split.project_high(u))
            .collect::<Result<Vec<_>>>()?;
        Ok(PotentialPath {
            nodes,
            horizon: self.horizon,
        })
    }

    pub fn is_high_band(&self, split: &FrequencySplit, tol: f64) -> Result<bool> {
        for node in &self.nodes {
            if !split.is_high_band(node, tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `sup_t` of the nodewise Sobolev norm (the C^0 H^s size of the path).
    pub fn sup_norm(&self, scale: &SobolevScale) -> Result<f64> {
        let mut sup = 0.0f64;
        for node in &self.nodes {
            sup = sup.max(sobolev_norm(node, scale)?);
        }
        Ok(sup)
    }

    /// Trapezoid L^2-in-time norm of the nodewise Sobolev norms.
    pub fn l2_norm(&self, scale: &SobolevScale) -> Result<f64> {
        let dt = self.node_dt();
        let last = self.nodes.len() - 1;
        let mut acc = 0.0;
        for (j, node) in self.nodes.iter().enumerate() {
            let w = if j == 0 || j == last { dt / 2.0 } else { dt };
            acc += w * sobolev_norm(node, scale)?.powi(2);
        }
        Ok(acc.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusGeometry;

    fn mode(geom: &Arc<TorusGeometry>, k: i64, amp: C64) -> SpectralField {
        SpectralField::mode(geom, &[k], amp).unwrap()
    }

    #[test]
    fn construction_guards_shape_and_horizon() {
        let geom = TorusGeometry::line(8).unwrap();
        let u = mode(&geom, 1, C64::new(1.0, 0.0));
        assert!(PotentialPath::new(vec![u.clone()], 1.0).is_err());
        assert!(PotentialPath::new(vec![u.clone(), u.clone()], 0.0).is_err());
        let other = SpectralField::zero(&TorusGeometry::line(16).unwrap());
        assert!(PotentialPath::new(vec![u.clone(), other], 1.0).is_err());
        let p = PotentialPath::new(vec![u.clone(), u], 2.0).unwrap();
        assert_eq!(p.node_count(), 2);
        assert!((p.node_dt() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sample_is_linear_between_nodes_and_exact_at_them() {
        let geom = TorusGeometry::line(8).unwrap();
        let nodes: Vec<SpectralField> = (0..5)
            .map(|j| mode(&geom, 1, C64::new(j as f64, -(j as f64))))
            .collect();
        let p = PotentialPath::new(nodes, 1.0).unwrap();
        for j in 0..5 {
            let at = p.sample(p.node_time(j)).unwrap();
            assert!(
                (at.coefficient(&[1]).unwrap() - p.node(j).coefficient(&[1]).unwrap()).norm()
                    < 1e-14
            );
        }
        let mid = p.sample(0.375).unwrap(); // halfway between nodes 1 and 2
        assert!((mid.coefficient(&[1]).unwrap() - C64::new(1.5, -1.5)).norm() < 1e-14);
        assert!(p.sample(-0.01).is_err());
        assert!(p.sample(1.01).is_err());
        // endpoint slack admits rounding-level overshoot
        assert!(p.sample(1.0 + 1e-12).is_ok());
    }

    #[test]
    fn norms_agree_with_hand_quadrature() {
        let geom = TorusGeometry::line(8).unwrap();
        let scale = SobolevScale::new(&geom, 0.0).unwrap();
        let c = mode(&geom, 2, C64::new(0.3, -0.4)); // L2 norm 0.5
        let p = PotentialPath::constant(&c, 2.0, 9).unwrap();
        assert!((p.sup_norm(&scale).unwrap() - 0.5).abs() < 1e-14);
        assert!((p.l2_norm(&scale).unwrap() - 0.5 * 2.0f64.sqrt()).abs() < 1e-14);

        // amplitudes 0, 1, 2 on three nodes over T = 1: trapezoid gives
        // integral of |u|^2 as (1/4)(0) + (1/2)(1) + (1/4)(4) = 3/2
        let nodes: Vec<SpectralField> = (0..3)
            .map(|j| mode(&geom, 1, C64::new(j as f64, 0.0)))
            .collect();
        let q = PotentialPath::new(nodes, 1.0).unwrap();
        assert!((q.l2_norm(&scale).unwrap() - 1.5f64.sqrt()).abs() < 1e-14);
        assert!((q.sup_norm(&scale).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn band_projections_reassemble_the_path() {
        let geom = TorusGeometry::line(16).unwrap();
        let split = FrequencySplit::new(&geom, 3).unwrap();
        let nodes: Vec<SpectralField> = (0..4)
            .map(|j| {
                let mut u = mode(&geom, 1, C64::new(1.0, j as f64));
                u.axpy(C64::new(1.0, 0.0), &mode(&geom, 5, C64::new(-0.2, 0.7)));
                u
            })
            .collect();
        let p = PotentialPath::new(nodes, 1.0).unwrap();
        let low = p.project_low(&split).unwrap();
        let high = p.project_high(&split).unwrap();
        assert!(low.is_high_band(&split, 1e-15).is_ok());
        assert!(high.is_high_band(&split, 1e-15).unwrap());
        assert!(!p.is_high_band(&split, 1e-12).unwrap());
        let sum = low.add(&high).unwrap();
        for j in 0..4 {
            for (a, b) in sum
                .node(j)
                .coefficients()
                .iter()
                .zip(p.node(j).coefficients())
            {
                assert_eq!(a, b); // projections write exact zeros, sum is exact
            }
        }
    }

    #[test]
    fn arithmetic_is_nodewise() {
        let geom = TorusGeometry::line(8).unwrap();
        let p = PotentialPath::constant(&mode(&geom, 1, C64::new(1.0, 0.0)), 1.0, 3).unwrap();
        let q = PotentialPath::constant(&mode(&geom, 1, C64::new(0.0, 2.0)), 1.0, 3).unwrap();
        let mut r = p.add(&q).unwrap();
        r.axpy(C64::new(-1.0, 0.0), &q).unwrap();
        let diff = r.sub(&p).unwrap();
        let scale = SobolevScale::new(&geom, 0.0).unwrap();
        assert!(diff.sup_norm(&scale).unwrap() < 1e-15);
        let s = p.scaled(C64::new(0.0, 3.0));
        assert!((s.node(1).coefficient(&[1]).unwrap() - C64::new(0.0, 3.0)).norm() < 1e-15);
        let shorter = PotentialPath::constant(&mode(&geom, 1, C64::new(1.0, 0.0)), 1.0, 4).unwrap();
        assert!(p.add(&shorter).is_err());
        let longer = PotentialPath::constant(&mode(&geom, 1, C64::new(1.0, 0.0)), 2.0, 3).unwrap();
        assert!(p.add(&longer).is_err());
    }
}
