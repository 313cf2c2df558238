//! Flat torus geometry: grid layout, Laplacian eigenvalues, the
//! eigenvalue-ordered mode ranking, and cached FFT plans.

use std::fmt;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{ModelError, Result};
use crate::C64;

/// A flat torus `prod_i R / (L_i Z)` with `d` in {1, 2}, discretized on a
/// uniform grid of `N_i` points per axis.
///
/// The spectral basis is the orthonormal family
/// `e_k(x) = exp(i k . (2 pi / L) x) / sqrt(prod L_i)` indexed by integer
/// vectors `k` with `-N_i/2 <= k_i < N_i/2`, stored in FFT bin order. The
/// Laplacian eigenvalue of `e_k` is `lambda_k = sum_i (2 pi k_i / L_i)^2`.
///
/// Modes are additionally ranked by eigenvalue, ascending, with ties broken
/// by lexicographic comparison of the integer index `k`. The frequency split
/// P_n / Q_n keeps the first `n` ranks. On the line with `L = 2 pi` the
/// ranking starts `0, -1, +1, -2, +2, ...`, so `n = 3` keeps `{0, -1, +1}`
/// and `n = 8` keeps every `|k| <= 3` together with `k = -4`.
pub struct TorusGeometry {
    dims: Vec<usize>,
    lengths: Vec<f64>,
    eigenvalues: Vec<f64>,
    rank_of_bin: Vec<usize>,
    bin_of_rank: Vec<usize>,
    // per-axis retention flag for the 2/3 dealias mask, flattened over bins
    two_thirds: Vec<bool>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl TorusGeometry {
    /// Builds a torus geometry. Grid sizes must be powers of two (>= 4) and
    /// side lengths positive; one or two axes are supported.
    pub fn new(dims: &[usize], lengths: &[f64]) -> Result<Arc<Self>> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(ModelError::InvalidParameter(format!(
                "spatial dimension must be 1 or 2, got {}",
                dims.len()
            )));
        }
        if dims.len() != lengths.len() {
            return Err(ModelError::InvalidParameter(format!(
                "{} grid sizes but {} side lengths",
                dims.len(),
                lengths.len()
            )));
        }
        for &n in dims {
            if n < 4 || !n.is_power_of_two() {
                return Err(ModelError::InvalidParameter(format!(
                    "grid size {n} is not a power of two >= 4"
                )));
            }
        }
        for &l in lengths {
            if !(l.is_finite() && l > 0.0) {
                return Err(ModelError::InvalidParameter(format!(
                    "side length {l} is not positive and finite"
                )));
            }
        }

        let n_total: usize = dims.iter().product();
        let mut eigenvalues = vec![0.0; n_total];
        let mut two_thirds = vec![true; n_total];
        for bin in 0..n_total {
            let k = k_of_bin(dims, bin);
            let mut lambda = 0.0;
            for (axis, &ki) in k.iter().enumerate() {
                let xi = std::f64::consts::TAU * ki as f64 / lengths[axis];
                lambda += xi * xi;
                if ki.unsigned_abs() as usize > dims[axis] / 3 {
                    two_thirds[bin] = false;
                }
            }
            eigenvalues[bin] = lambda;
        }

        let mut bin_of_rank: Vec<usize> = (0..n_total).collect();
        bin_of_rank.sort_by(|&a, &b| {
            eigenvalues[a]
                .total_cmp(&eigenvalues[b])
                .then_with(|| k_of_bin(dims, a).cmp(&k_of_bin(dims, b)))
        });
        let mut rank_of_bin = vec![0; n_total];
        for (rank, &bin) in bin_of_rank.iter().enumerate() {
            rank_of_bin[bin] = rank;
        }

        let mut planner = FftPlanner::new();
        let fwd = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();

        Ok(Arc::new(TorusGeometry {
            dims: dims.to_vec(),
            lengths: lengths.to_vec(),
            eigenvalues,
            rank_of_bin,
            bin_of_rank,
            two_thirds,
            fwd,
            inv,
        }))
    }

    /// The circle of circumference 2 pi with `n` grid points.
    pub fn line(n: usize) -> Result<Arc<Self>> {
        Self::new(&[n], &[std::f64::consts::TAU])
    }

    /// The square torus of side 2 pi with `n` points per axis.
    pub fn square(n: usize) -> Result<Arc<Self>> {
        Self::new(&[n, n], &[std::f64::consts::TAU, std::f64::consts::TAU])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Total number of grid points, equal to the number of spectral modes.
    pub fn n_total(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Volume of the torus, `prod L_i`.
    pub fn domain_volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Quadrature weight of one grid cell, `prod (L_i / N_i)`.
    pub fn cell_volume(&self) -> f64 {
        self.domain_volume() / self.n_total() as f64
    }

    /// Laplacian eigenvalue `lambda_k` of the mode stored at `bin`.
    pub fn eigenvalue(&self, bin: usize) -> f64 {
        self.eigenvalues[bin]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Position of `bin` in the eigenvalue ordering (0 = lowest).
    pub fn rank_of_bin(&self, bin: usize) -> usize {
        self.rank_of_bin[bin]
    }

    /// Bin holding the mode of the given rank.
    pub fn bin_of_rank(&self, rank: usize) -> usize {
        self.bin_of_rank[rank]
    }

    /// Integer wavevector `k` of the mode stored at `bin`.
    pub fn index_of_bin(&self, bin: usize) -> Vec<i64> {
        k_of_bin(&self.dims, bin)
    }

    /// Bin holding the mode of integer wavevector `k`.
    pub fn bin_of_index(&self, k: &[i64]) -> Result<usize> {
        if k.len() != self.dims.len() {
            return Err(ModelError::InputShape {
                what: "wavevector components",
                expected: self.dims.len(),
                actual: k.len(),
            });
        }
        let mut bin = 0;
        for (axis, &ki) in k.iter().enumerate() {
            let n = self.dims[axis] as i64;
            if ki < -n / 2 || ki >= n / 2 {
                return Err(ModelError::InvalidParameter(format!(
                    "wavevector component {ki} outside the band [{}, {})",
                    -n / 2,
                    n / 2
                )));
            }
            let b = if ki >= 0 { ki } else { ki + n } as usize;
            bin = bin * self.dims[axis] + b;
        }
        Ok(bin)
    }

    /// Physical coordinates of the grid node sharing the flattened index
    /// `bin`; node `j` of axis `i` sits at `j L_i / N_i`.
    pub fn grid_point(&self, bin: usize) -> Vec<f64> {
        let mut rem = bin;
        let mut x = vec![0.0; self.dims.len()];
        for axis in (0..self.dims.len()).rev() {
            let n = self.dims[axis];
            x[axis] = (rem % n) as f64 * self.lengths[axis] / n as f64;
            rem /= n;
        }
        x
    }

    /// Whether `bin` survives the 2/3-rule dealias mask (`|k_i| <= N_i/3`).
    pub fn two_thirds_retained(&self, bin: usize) -> bool {
        self.two_thirds[bin]
    }

    /// Unnormalized forward DFT along every axis.
    pub fn fft_forward(&self, data: &mut [C64]) {
        self.transform(&self.fwd, data);
    }

    /// Unnormalized inverse DFT along every axis (forward then inverse
    /// multiplies by `n_total`).
    pub fn fft_inverse(&self, data: &mut [C64]) {
        self.transform(&self.inv, data);
    }

    fn transform(&self, plans: &[Arc<dyn Fft<f64>>], data: &mut [C64]) {
        transform_nd(plans, &self.dims, data);
    }
}

/// Applies per-axis DFT plans to a flattened row-major array.
pub(crate) fn transform_nd(plans: &[Arc<dyn Fft<f64>>], dims: &[usize], data: &mut [C64]) {
    assert_eq!(
        data.len(),
        dims.iter().product::<usize>(),
        "field length mismatch"
    );
    match dims.len() {
        1 => {
            let mut scratch = vec![C64::default(); plans[0].get_inplace_scratch_len()];
            plans[0].process_with_scratch(data, &mut scratch);
        }
        2 => {
            let (n0, n1) = (dims[0], dims[1]);
            let mut scratch = vec![
                C64::default();
                plans[0]
                    .get_inplace_scratch_len()
                    .max(plans[1].get_inplace_scratch_len())
            ];
            for row in data.chunks_exact_mut(n1) {
                plans[1].process_with_scratch(row, &mut scratch);
            }
            let mut col = vec![C64::default(); n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = data[i * n1 + j];
                }
                plans[0].process_with_scratch(&mut col, &mut scratch);
                for i in 0..n0 {
                    data[i * n1 + j] = col[i];
                }
            }
        }
        _ => unreachable!(),
    }
}

impl PartialEq for TorusGeometry {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.lengths == other.lengths
    }
}

impl fmt::Debug for TorusGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGeometry")
            .field("dims", &self.dims)
            .field("lengths", &self.lengths)
            .finish()
    }
}

/// Integer wavevector of a flattened bin: per axis, bins `0..N/2` hold
/// `k = 0..N/2` and bins `N/2..N` hold `k = -N/2..0`.
pub(crate) fn k_of_bin(dims: &[usize], bin: usize) -> Vec<i64> {
    let mut rem = bin;
    let mut k = vec![0i64; dims.len()];
    for axis in (0..dims.len()).rev() {
        let n = dims[axis];
        let b = rem % n;
        rem /= n;
        k[axis] = if b < n / 2 {
            b as i64
        } else {
            b as i64 - n as i64
        };
    }
    k
}

/// Errors unless the two geometries describe the same torus discretization.
pub(crate) fn check_same(a: &Arc<TorusGeometry>, b: &Arc<TorusGeometry>, what: &str) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(ModelError::GeometryMismatch(format!(
            "{what}: {:?} vs {:?}",
            a, b
        )))
    }
}
