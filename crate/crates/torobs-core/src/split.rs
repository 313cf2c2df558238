//! The frequency split P_n / Q_n along the eigenvalue ordering.

use std::sync::Arc;

use crate::error::{ModelError, Result};
use crate::field::SpectralField;
use crate::geometry::{check_same, TorusGeometry};
use crate::C64;

/// Splits the mode set at rank `n`: P_n keeps the `n` lowest-ranked modes,
/// Q_n the remaining `m = N_total - n`.
#[derive(Clone, Debug)]
pub struct FrequencySplit {
    geom: Arc<TorusGeometry>,
    n: usize,
    low_bins: Vec<usize>,
    high_bins: Vec<usize>,
}

impl FrequencySplit {
    pub fn new(geom: &Arc<TorusGeometry>, n: usize) -> Result<Self> {
        if n > geom.n_total() {
            return Err(ModelError::InvalidParameter(format!(
                "split rank {n} exceeds the mode count {}",
                geom.n_total()
            )));
        }
        let low_bins: Vec<usize> = (0..n).map(|r| geom.bin_of_rank(r)).collect();
        let high_bins: Vec<usize> = (n..geom.n_total()).map(|r| geom.bin_of_rank(r)).collect();
        Ok(FrequencySplit {
            geom: Arc::clone(geom),
            n,
            low_bins,
            high_bins,
        })
    }

    pub fn geometry(&self) -> &Arc<TorusGeometry> {
        &self.geom
    }

    pub fn cutoff(&self) -> usize {
        self.n
    }

    pub fn low_dim(&self) -> usize {
        self.n
    }

    pub fn high_dim(&self) -> usize {
        self.geom.n_total() - self.n
    }

    /// Bins of the low band, in rank order.
    pub fn low_bins(&self) -> &[usize] {
        &self.low_bins
    }

    /// Bins of the high band, in rank order.
    pub fn high_bins(&self) -> &[usize] {
        &self.high_bins
    }

    /// P_n: zeroes every high-band coefficient.
    pub fn project_low(&self, u: &SpectralField) -> Result<SpectralField> {
        check_same(u.geometry(), &self.geom, "low projection")?;
        let mut out = u.clone();
        self.zero_high(out.coefficients_mut());
        Ok(out)
    }

    /// Q_n: zeroes every low-band coefficient.
    pub fn project_high(&self, u: &SpectralField) -> Result<SpectralField> {
        check_same(u.geometry(), &self.geom, "high projection")?;
        let mut out = u.clone();
        self.zero_low(out.coefficients_mut());
        Ok(out)
    }

    pub(crate) fn zero_low(&self, coef: &mut [C64]) {
        for &b in &self.low_bins {
            coef[b] = C64::default();
        }
    }

    pub(crate) fn zero_high(&self, coef: &mut [C64]) {
        for &b in &self.high_bins {
            coef[b] = C64::default();
        }
    }

    /// Whether every low-band coefficient is at most `tol` in modulus.
    pub fn is_high_band(&self, u: &SpectralField, tol: f64) -> Result<bool> {
        check_same(u.geometry(), &self.geom, "band check")?;
        Ok(self
            .low_bins
            .iter()
            .all(|&b| u.coefficients()[b].norm() <= tol))
    }

    /// Whether every high-band coefficient is at most `tol` in modulus.
    pub fn is_low_band(&self, u: &SpectralField, tol: f64) -> Result<bool> {
        check_same(u.geometry(), &self.geom, "band check")?;
        Ok(self
            .high_bins
            .iter()
            .all(|&b| u.coefficients()[b].norm() <= tol))
    }
}
