//! Observation windows: smooth cutoffs b_omega and the multiplication
//! operator C u = b_omega u.

use std::sync::Arc;

use crate::error::{ModelError, Result};
use crate::field::SpectralField;
use crate::geometry::{check_same, TorusGeometry};
use crate::C64;

/// An axis-aligned box inside the fundamental domain, `lo_i <= x_i <= hi_i`
/// with `0 <= lo_i` and `hi_i <= L_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        BoxRegion { lo, hi }
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &xi)| xi >= self.lo[i] && xi <= self.hi[i])
    }
}

/// The C^infinity step: 0 for `t <= 0`, 1 for `t >= 1`, strictly increasing
/// in between, built from `phi(t) = exp(-1/t)`.
pub fn smooth_step(t: f64) -> f64 {
    fn phi(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = phi(t);
        a / (a + phi(1.0 - t))
    }
}

/// A smooth observation cutoff b_omega sampled on the grid, together with
/// the boxes that generated it. The cutoff equals 1 on each plateau box,
/// vanishes outside the union of the support boxes, and takes values in
/// [0, 1] everywhere. Multiple regions are blended with the soft union
/// `1 - prod_r (1 - b_r)`, which preserves all three properties.
#[derive(Clone, Debug)]
pub struct ObservationWindow {
    geom: Arc<TorusGeometry>,
    regions: Vec<(BoxRegion, BoxRegion)>,
    samples: Vec<f64>,
}

impl ObservationWindow {
    /// Builds the window from (support, plateau) box pairs. Each plateau
    /// must sit strictly inside its support box axis by axis, except that an
    /// axis covering the full period may be flat (`lo = 0`, `hi = L`), in
    /// which case the profile is identically 1 along it. An empty region
    /// list gives the zero window.
    pub fn new(geom: &Arc<TorusGeometry>, regions: Vec<(BoxRegion, BoxRegion)>) -> Result<Self> {
        let d = geom.dim();
        for (support, plateau) in &regions {
            if support.lo.len() != d
                || support.hi.len() != d
                || plateau.lo.len() != d
                || plateau.hi.len() != d
            {
                return Err(ModelError::InputShape {
                    what: "window box components",
                    expected: d,
                    actual: support.lo.len(),
                });
            }
            for axis in 0..d {
                let l = geom.lengths()[axis];
                let (slo, shi) = (support.lo[axis], support.hi[axis]);
                let (plo, phi) = (plateau.lo[axis], plateau.hi[axis]);
                let full = slo == 0.0 && shi == l && plo == 0.0 && phi == l;
                let nested = 0.0 <= slo && slo < plo && plo < phi && phi < shi && shi <= l;
                if !(full || nested) {
                    return Err(ModelError::InvalidParameter(format!(
                        "axis {axis}: plateau [{plo}, {phi}] must sit strictly inside \
                         support [{slo}, {shi}] within [0, {l}], or both must span the \
                         full period"
                    )));
                }
            }
        }

        let mut samples = vec![0.0; geom.n_total()];
        for (bin, b) in samples.iter_mut().enumerate() {
            let x = geom.grid_point(bin);
            let mut miss = 1.0;
            for (support, plateau) in &regions {
                miss *= 1.0 - region_profile(geom, support, plateau, &x);
            }
            *b = (1.0 - miss).clamp(0.0, 1.0);
        }

        Ok(ObservationWindow {
            geom: Arc::clone(geom),
            regions,
            samples,
        })
    }

    /// The trivial window b == 1 (whole torus observed).
    pub fn uniform(geom: &Arc<TorusGeometry>) -> Self {
        let full = BoxRegion::new(vec![0.0; geom.dim()], geom.lengths().to_vec());
        ObservationWindow {
            geom: Arc::clone(geom),
            regions: vec![(full.clone(), full)],
            samples: vec![1.0; geom.n_total()],
        }
    }

    /// One-dimensional convenience: a single interval window.
    pub fn interval(
        geom: &Arc<TorusGeometry>,
        support: (f64, f64),
        plateau: (f64, f64),
    ) -> Result<Self> {
        Self::new(
            geom,
            vec![(
                BoxRegion::new(vec![support.0], vec![support.1]),
                BoxRegion::new(vec![plateau.0], vec![plateau.1]),
            )],
        )
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        &self.geom
    }

    pub fn regions(&self) -> &[(BoxRegion, BoxRegion)] {
        &self.regions
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn value(&self, bin: usize) -> f64 {
        self.samples[bin]
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Whether the point (folded into the fundamental domain) lies in some
    /// plateau box.
    pub fn plateau_contains(&self, x: &[f64]) -> bool {
        let folded: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let l = self.geom.lengths()[i];
                xi.rem_euclid(l)
            })
            .collect();
        self.regions
            .iter()
            .any(|(_, plateau)| plateau.contains(&folded))
    }

    /// The observation C u = b_omega u, computed on the grid.
    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        check_same(u.geometry(), &self.geom, "observation")?;
        let mut phys = u.to_physical();
        self.apply_physical(&mut phys);
        SpectralField::to_spectral(&self.geom, &phys)
    }

    pub(crate) fn apply_physical(&self, phys: &mut [C64]) {
        for (p, &b) in phys.iter_mut().zip(&self.samples) {
            *p *= b;
        }
    }
}

/// The observation operator as a free function.
pub fn observe(u: &SpectralField, window: &ObservationWindow) -> Result<SpectralField> {
    window.apply(u)
}

fn region_profile(
    geom: &TorusGeometry,
    support: &BoxRegion,
    plateau: &BoxRegion,
    x: &[f64],
) -> f64 {
    let mut b = 1.0;
    for axis in 0..geom.dim() {
        let l = geom.lengths()[axis];
        let (slo, shi) = (support.lo[axis], support.hi[axis]);
        let (plo, phi) = (plateau.lo[axis], plateau.hi[axis]);
        if slo == 0.0 && shi == l && plo == 0.0 && phi == l {
            continue;
        }
        let xi = x[axis];
        let axis_value = if xi <= slo || xi >= shi {
            0.0
        } else if xi < plo {
            smooth_step((xi - slo) / (plo - slo))
        } else if xi <= phi {
            1.0
        } else {
            smooth_step((shi - xi) / (shi - phi))
        };
        b *= axis_value;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_endpoints_and_symmetry() {
        assert_eq!(smooth_step(-0.5), 0.0);
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        assert!((smooth_step(0.3) + smooth_step(0.7) - 1.0).abs() < 1e-12);
        assert!(smooth_step(0.3) < smooth_step(0.4));
    }

    #[test]
    fn interval_window_invariants() {
        let g = TorusGeometry::line(128).unwrap();
        let w = ObservationWindow::interval(&g, (2.0, 4.0), (2.5, 3.5)).unwrap();
        for bin in 0..g.n_total() {
            let x = g.grid_point(bin)[0];
            let b = w.value(bin);
            assert!((0.0..=1.0).contains(&b));
            if (2.5..=3.5).contains(&x) {
                assert_eq!(b, 1.0);
            }
            if !(2.0..4.0).contains(&x) {
                assert_eq!(b, 0.0);
            }
        }
        assert!(w.plateau_contains(&[3.0]));
        assert!(w.plateau_contains(&[3.0 + std::f64::consts::TAU]));
        assert!(!w.plateau_contains(&[1.0]));
    }

    #[test]
    fn uniform_window_is_identity_on_fields() {
        let g = TorusGeometry::line(32).unwrap();
        let w = ObservationWindow::uniform(&g);
        let u = SpectralField::mode(&g, &[4], C64::new(0.3, -1.0)).unwrap();
        let cu = observe(&u, &w).unwrap();
        for (a, b) in cu.coefficients().iter().zip(u.coefficients()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn union_of_two_strips_covers_both_plateaus() {
        let g = TorusGeometry::square(32).unwrap();
        let l = std::f64::consts::TAU;
        // a vertical and a horizontal strip, each flat along one axis
        let vertical = (
            BoxRegion::new(vec![1.0, 0.0], vec![3.0, l]),
            BoxRegion::new(vec![1.5, 0.0], vec![2.5, l]),
        );
        let horizontal = (
            BoxRegion::new(vec![0.0, 2.0], vec![l, 4.0]),
            BoxRegion::new(vec![0.0, 2.5], vec![l, 3.5]),
        );
        let w = ObservationWindow::new(&g, vec![vertical, horizontal]).unwrap();
        assert!(w.plateau_contains(&[2.0, 0.1]));
        assert!(w.plateau_contains(&[5.0, 3.0]));
        for bin in 0..g.n_total() {
            assert!((0.0..=1.0).contains(&w.value(bin)));
        }
        // grid points inside either plateau see exactly 1
        for bin in 0..g.n_total() {
            let x = g.grid_point(bin);
            if (1.5..=2.5).contains(&x[0]) || (2.5..=3.5).contains(&x[1]) {
                assert_eq!(w.value(bin), 1.0);
            }
        }
    }

    #[test]
    fn rejects_misnested_boxes() {
        let g = TorusGeometry::line(32).unwrap();
        assert!(ObservationWindow::interval(&g, (2.0, 4.0), (1.5, 3.0)).is_err());
        assert!(ObservationWindow::interval(&g, (2.0, 4.0), (2.0, 3.0)).is_err());
        assert!(ObservationWindow::interval(&g, (-0.1, 4.0), (1.0, 3.0)).is_err());
    }

    #[test]
    fn empty_window_is_zero() {
        let g = TorusGeometry::line(16).unwrap();
        let w = ObservationWindow::new(&g, vec![]).unwrap();
        assert!(w.is_empty());
        assert!(w.samples().iter().all(|&b| b == 0.0));
        assert!(!w.plateau_contains(&[0.0]));
    }
}
