//! Complex fields stored by their Fourier coefficients.

use std::sync::Arc;

use crate::error::{ModelError, Result};
use crate::geometry::{check_same, TorusGeometry};
use crate::C64;

/// A field on the torus, held as coefficients against the orthonormal basis
/// `e_k`, in FFT bin order. With this normalization `sum_k |u_k|^2` is the
/// squared L^2 norm, and the constant field `c` has zero-mode coefficient
/// `c sqrt(prod L_i)`.
#[derive(Clone, Debug)]
pub struct SpectralField {
    geom: Arc<TorusGeometry>,
    coef: Vec<C64>,
}

impl SpectralField {
    pub fn zero(geom: &Arc<TorusGeometry>) -> Self {
        SpectralField {
            geom: Arc::clone(geom),
            coef: vec![C64::default(); geom.n_total()],
        }
    }

    /// Wraps raw coefficients; every entry must be finite.
    pub fn from_coefficients(geom: &Arc<TorusGeometry>, coef: Vec<C64>) -> Result<Self> {
        if coef.len() != geom.n_total() {
            return Err(ModelError::InputShape {
                what: "spectral coefficients",
                expected: geom.n_total(),
                actual: coef.len(),
            });
        }
        if !coef.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "spectral coefficients must be finite".into(),
            ));
        }
        Ok(SpectralField {
            geom: Arc::clone(geom),
            coef,
        })
    }

    /// The single mode `amp * e_k`.
    pub fn mode(geom: &Arc<TorusGeometry>, k: &[i64], amp: C64) -> Result<Self> {
        let mut f = Self::zero(geom);
        f.coef[geom.bin_of_index(k)?] = amp;
        Ok(f)
    }

    /// Transforms grid samples (flattened like the geometry's bins) to
    /// spectral coefficients.
    pub fn to_spectral(geom: &Arc<TorusGeometry>, samples: &[C64]) -> Result<Self> {
        if samples.len() != geom.n_total() {
            return Err(ModelError::InputShape {
                what: "grid samples",
                expected: geom.n_total(),
                actual: samples.len(),
            });
        }
        let mut coef = samples.to_vec();
        geom.fft_forward(&mut coef);
        let scale = geom.domain_volume().sqrt() / geom.n_total() as f64;
        for c in &mut coef {
            *c *= scale;
        }
        Self::from_coefficients(geom, coef)
    }

    /// Evaluates the field on the grid.
    pub fn to_physical(&self) -> Vec<C64> {
        let mut out = self.coef.clone();
        self.geom.fft_inverse(&mut out);
        let scale = 1.0 / self.geom.domain_volume().sqrt();
        for c in &mut out {
            *c *= scale;
        }
        out
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        &self.geom
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coef
    }

    /// Mutable coefficient access; the caller keeps entries finite.
    pub fn coefficients_mut(&mut self) -> &mut [C64] {
        &mut self.coef
    }

    pub fn coefficient(&self, k: &[i64]) -> Result<C64> {
        Ok(self.coef[self.geom.bin_of_index(k)?])
    }

    pub fn set_coefficient(&mut self, k: &[i64], c: C64) -> Result<()> {
        let bin = self.geom.bin_of_index(k)?;
        self.coef[bin] = c;
        Ok(())
    }

    /// L^2 norm, `sqrt(sum |u_k|^2)`.
    pub fn l2_norm(&self) -> f64 {
        self.coef.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest |u| over the grid nodes.
    pub fn sup_physical(&self) -> f64 {
        self.to_physical()
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coef
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, c: C64) {
        for x in &mut self.coef {
            *x *= c;
        }
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    /// `self += alpha * x`. Panics on a geometry mismatch; use [`Self::add`]
    /// at validation boundaries.
    pub fn axpy(&mut self, alpha: C64, x: &Self) {
        assert_eq!(
            **x.geometry(),
            *self.geom,
            "axpy across different geometries"
        );
        for (a, b) in self.coef.iter_mut().zip(&x.coef) {
            *a += alpha * b;
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        check_same(&self.geom, &rhs.geom, "field addition")?;
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), rhs);
        Ok(out)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        check_same(&self.geom, &rhs.geom, "field subtraction")?;
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), rhs);
        Ok(out)
    }

    /// Copies the coefficients into a larger geometry by integer wavevector;
    /// the target band must contain the source band.
    pub fn embed(&self, target: &Arc<TorusGeometry>) -> Result<Self> {
        let mut out = Self::zero(target);
        for (bin, &c) in self.coef.iter().enumerate() {
            if c != C64::default() {
                let k = self.geom.index_of_bin(bin);
                let tbin = target.bin_of_index(&k)?;
                out.coef[tbin] = c;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_concentrates_on_the_zero_mode() {
        let g = TorusGeometry::line(32).unwrap();
        let samples = vec![C64::new(2.0, -1.0); 32];
        let f = SpectralField::to_spectral(&g, &samples).unwrap();
        let expected = C64::new(2.0, -1.0) * std::f64::consts::TAU.sqrt();
        assert!((f.coefficient(&[0]).unwrap() - expected).norm() < 1e-12);
        for k in 1..16 {
            assert!(f.coefficient(&[k]).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn transform_round_trip() {
        let g = TorusGeometry::new(&[8, 8], &[3.0, 5.0]).unwrap();
        let samples: Vec<C64> = (0..64)
            .map(|j| C64::new((j as f64).sin(), (j as f64 * 0.7).cos()))
            .collect();
        let f = SpectralField::to_spectral(&g, &samples).unwrap();
        let back = f.to_physical();
        for (a, b) in back.iter().zip(&samples) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_against_grid_quadrature() {
        let g = TorusGeometry::line(64).unwrap();
        let samples: Vec<C64> = (0..64)
            .map(|j| {
                let x = j as f64 * std::f64::consts::TAU / 64.0;
                C64::new(x.sin() + 0.3, (2.0 * x).cos())
            })
            .collect();
        let f = SpectralField::to_spectral(&g, &samples).unwrap();
        let grid: f64 = samples.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.cell_volume();
        assert!((f.l2_norm().powi(2) - grid).abs() < 1e-10 * grid.max(1.0));
    }

    #[test]
    fn plane_wave_has_unit_l2_norm_with_normalized_amplitude() {
        let g = TorusGeometry::line(16).unwrap();
        // e_k itself: amplitude 1 coefficient
        let f = SpectralField::mode(&g, &[3], C64::new(1.0, 0.0)).unwrap();
        assert!((f.l2_norm() - 1.0).abs() < 1e-14);
        let phys = f.to_physical();
        // |e_k| = 1 / sqrt(2 pi) pointwise
        for c in phys {
            assert!((c.norm() - 1.0 / std::f64::consts::TAU.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_preserves_modes() {
        let small = TorusGeometry::line(16).unwrap();
        let big = TorusGeometry::line(64).unwrap();
        let f = SpectralField::mode(&small, &[-5], C64::new(0.0, 2.0)).unwrap();
        let e = f.embed(&big).unwrap();
        assert!((e.coefficient(&[-5]).unwrap() - C64::new(0.0, 2.0)).norm() < 1e-15);
        assert!((e.l2_norm() - f.l2_norm()).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let g = TorusGeometry::line(16).unwrap();
        assert!(SpectralField::from_coefficients(&g, vec![C64::default(); 8]).is_err());
        assert!(SpectralField::to_spectral(&g, &vec![C64::default(); 15]).is_err());
        assert!(SpectralField::from_coefficients(&g, vec![C64::new(f64::NAN, 0.0); 16]).is_err());
    }
}
