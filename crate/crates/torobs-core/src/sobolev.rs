//! Sobolev scales realized as diagonal Fourier multipliers.

use std::sync::Arc;

use crate::error::{ModelError, Result};
use crate::field::SpectralField;
use crate::geometry::{check_same, TorusGeometry};
use crate::C64;

/// Precomputed weights of the H^s inner product on a fixed geometry:
/// `weight_k = (1 + lambda_k)^s` and its square root `(1 + lambda_k)^{s/2}`,
/// the latter being the per-mode action of the multiplier Lambda_s.
#[derive(Clone, Debug)]
pub struct SobolevScale {
    geom: Arc<TorusGeometry>,
    s: f64,
    weight: Vec<f64>,
    half: Vec<f64>,
}

impl SobolevScale {
    pub fn new(geom: &Arc<TorusGeometry>, s: f64) -> Result<Self> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "Sobolev exponent {s} must be finite and >= 0"
            )));
        }
        let weight: Vec<f64> = geom
            .eigenvalues()
            .iter()
            .map(|&l| (1.0 + l).powf(s))
            .collect();
        let half: Vec<f64> = geom
            .eigenvalues()
            .iter()
            .map(|&l| (1.0 + l).powf(s / 2.0))
            .collect();
        Ok(SobolevScale {
            geom: Arc::clone(geom),
            s,
            weight,
            half,
        })
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        &self.geom
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    /// `(1 + lambda_k)^s` for the mode at `bin`.
    pub fn weight(&self, bin: usize) -> f64 {
        self.weight[bin]
    }

    /// `(1 + lambda_k)^{s/2}` for the mode at `bin`.
    pub fn half_weight(&self, bin: usize) -> f64 {
        self.half[bin]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn half_weights(&self) -> &[f64] {
        &self.half
    }
}

/// Hermitian H^s pairing `sum_k (1 + lambda_k)^s u_k conj(v_k)`.
pub fn sobolev_inner(u: &SpectralField, v: &SpectralField, scale: &SobolevScale) -> Result<C64> {
    check_same(u.geometry(), scale.geometry(), "H^s inner product")?;
    check_same(v.geometry(), scale.geometry(), "H^s inner product")?;
    let mut acc = C64::default();
    for ((a, b), w) in u
        .coefficients()
        .iter()
        .zip(v.coefficients())
        .zip(&scale.weight)
    {
        acc += w * a * b.conj();
    }
    Ok(acc)
}

/// The real Hilbert pairing `Re <u, v>_{H^s}` of the identification of the
/// complex field space with pairs of real fields.
pub fn real_inner(u: &SpectralField, v: &SpectralField, scale: &SobolevScale) -> Result<f64> {
    Ok(sobolev_inner(u, v, scale)?.re)
}

/// H^s norm of `u`.
pub fn sobolev_norm(u: &SpectralField, scale: &SobolevScale) -> Result<f64> {
    Ok(real_inner(u, u, scale)?.max(0.0).sqrt())
}

/// The multiplier Lambda_s, acting per mode as `(1 + lambda_k)^{s/2}`.
/// Negative exponents are allowed and invert the positive ones.
pub fn apply_multiplier(u: &SpectralField, s: f64) -> SpectralField {
    let geom = Arc::clone(u.geometry());
    let mut out = u.clone();
    for (c, &l) in out.coefficients_mut().iter_mut().zip(geom.eigenvalues()) {
        *c *= (1.0 + l).powf(s / 2.0);
    }
    out
}
