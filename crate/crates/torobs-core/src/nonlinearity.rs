//! Polynomial gauge-invariant nonlinearities f(u) = P'(|u|^2) u, their
//! real-linear differentials, and the integral Taylor remainder H.
//!
//! All products are evaluated pointwise on a dealiased grid and projected
//! back, so the algebraic identity
//!
//! ```text
//!     f(v + w) = f(v) + Df(v) w + H(v, w) w-free form, with
//!     H(v, w) = int_0^1 [Df(v + tau w) - Df(v)] w dtau,
//! ```
//!
//! holds exactly (to rounding) in the discretized variables: every operation
//! first masks its inputs and finally masks its output with the same rule.
//! For cubic products the 2/3 rule on the native grid is used; higher degrees
//! transfer to a zero-padded grid large enough that no aliased image of the
//! product lands back in the retained band.

use std::sync::Arc;

use rustfft::FftPlanner;

use crate::error::{ModelError, Result};
use crate::field::SpectralField;
use crate::geometry::{check_same, transform_nd, TorusGeometry};
use crate::C64;

/// Gauss-Legendre nodes and weights on [0, 1], exact through degree 2q-1.
const GL_TABLES: [&[(f64, f64)]; 5] = [
    &[(0.5, 1.0)],
    &[
        (0.211_324_865_405_187_1, 0.5),
        (0.788_675_134_594_812_9, 0.5),
    ],
    &[
        (0.112_701_665_379_258_31, 0.277_777_777_777_777_8),
        (0.5, 0.444_444_444_444_444_4),
        (0.887_298_334_620_741_7, 0.277_777_777_777_777_8),
    ],
    &[
        (0.069_431_844_202_973_71, 0.173_927_422_568_726_92),
        (0.330_009_478_207_571_87, 0.326_072_577_431_273_05),
        (0.669_990_521_792_428_1, 0.326_072_577_431_273_05),
        (0.930_568_155_797_026_2, 0.173_927_422_568_726_92),
    ],
    &[
        (0.046_910_077_030_668_02, 0.118_463_442_528_094_54),
        (0.230_765_344_947_158_45, 0.239_314_335_249_683_23),
        (0.5, 0.284_444_444_444_444_44),
        (0.769_234_655_052_841_5, 0.239_314_335_249_683_23),
        (0.953_089_922_969_331_9, 0.118_463_442_528_094_54),
    ],
];

/// A polynomial nonlinearity specified by the coefficients of
/// `P'(r) = sum_j c_j r^j` (index = power of r). `P` itself is the
/// antiderivative with `P(0) = 0`. The defocusing flag requires a positive
/// leading coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearitySpec {
    coeffs: Vec<f64>,
    defocusing: bool,
}

impl NonlinearitySpec {
    pub fn new(coeffs: &[f64], defocusing: bool) -> Result<Self> {
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(ModelError::InvalidParameter(
                "nonlinearity coefficients must be finite".into(),
            ));
        }
        let mut coeffs = coeffs.to_vec();
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        if defocusing && coeffs.last().map_or(true, |&c| c <= 0.0) {
            return Err(ModelError::InvalidParameter(
                "a defocusing nonlinearity needs a positive leading coefficient".into(),
            ));
        }
        if coeffs.len() > 5 {
            return Err(ModelError::InvalidParameter(format!(
                "P' degree {} exceeds the supported quadrature range (max 4)",
                coeffs.len() - 1
            )));
        }
        Ok(NonlinearitySpec { coeffs, defocusing })
    }

    /// The cubic defocusing nonlinearity, P'(r) = r.
    pub fn cubic() -> Self {
        NonlinearitySpec {
            coeffs: vec![0.0, 1.0],
            defocusing: true,
        }
    }

    /// The quintic defocusing nonlinearity, P'(r) = r^2.
    pub fn quintic() -> Self {
        NonlinearitySpec {
            coeffs: vec![0.0, 0.0, 1.0],
            defocusing: true,
        }
    }

    /// The zero nonlinearity, f == 0 (linear flow).
    pub fn none() -> Self {
        NonlinearitySpec {
            coeffs: vec![],
            defocusing: false,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_defocusing(&self) -> bool {
        self.defocusing
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree of P' in r (0 for constant or empty).
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    /// Degree of f(u) as a product of u and conj(u) factors.
    pub fn product_degree(&self) -> usize {
        2 * self.degree() + 1
    }

    pub fn p(&self, r: f64) -> f64 {
        // antiderivative of P', termwise, P(0) = 0
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * r + c / (j as f64 + 1.0);
        }
        acc * r
    }

    pub fn p_prime(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * r + c;
        }
        acc
    }

    pub fn p_double_prime(&self, r: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * r + c * j as f64;
        }
        acc
    }

    /// f(u) = P'(|u|^2) u, dealiased.
    pub fn eval_f(&self, u: &SpectralField) -> SpectralField {
        let mut ws = Workspace::new(u.geometry(), self);
        ws.load(&[u]);
        let n = ws.len();
        for j in 0..n {
            let uj = ws.phys[0][j];
            ws.out[j] = self.p_prime(uj.norm_sqr()) * uj;
        }
        ws.finish(u.geometry())
    }

    /// The real-linear differential Df(v) w = A_v w + B_v conj(w) with
    /// `A_v = P'(|v|^2) + P''(|v|^2) |v|^2` and `B_v = P''(|v|^2) v^2`.
    pub fn eval_df(&self, v: &SpectralField, w: &SpectralField) -> Result<SpectralField> {
        check_same(v.geometry(), w.geometry(), "differential arguments")?;
        let mut ws = Workspace::new(v.geometry(), self);
        ws.load(&[v, w]);
        let n = ws.len();
        for j in 0..n {
            let (vj, wj) = (ws.phys[0][j], ws.phys[1][j]);
            ws.out[j] = df_point(self, vj, wj);
        }
        Ok(ws.finish(v.geometry()))
    }

    /// The integral remainder H(v, w), with the default quadrature order
    /// `degree + 1` (exact: the integrand is a polynomial of degree
    /// `2 degree` in tau).
    pub fn eval_h(&self, v: &SpectralField, w: &SpectralField) -> Result<SpectralField> {
        self.eval_h_with_order(v, w, self.degree() + 1)
    }

    /// H(v, w) with an explicit Gauss-Legendre order `q <= 5`; orders below
    /// `degree + 1` are rejected since they would break the Taylor identity.
    pub fn eval_h_with_order(
        &self,
        v: &SpectralField,
        w: &SpectralField,
        q: usize,
    ) -> Result<SpectralField> {
        check_same(v.geometry(), w.geometry(), "remainder arguments")?;
        if q < self.degree() + 1 || q > 5 {
            return Err(ModelError::InvalidParameter(format!(
                "quadrature order {q} outside {}..=5",
                self.degree() + 1
            )));
        }
        let nodes = GL_TABLES[q - 1];
        let mut ws = Workspace::new(v.geometry(), self);
        ws.load(&[v, w]);
        let n = ws.len();
        for j in 0..n {
            let (vj, wj) = (ws.phys[0][j], ws.phys[1][j]);
            let base = df_point(self, vj, wj);
            let mut acc = C64::default();
            for &(tau, weight) in nodes {
                acc += weight * (df_point(self, vj + tau * wj, wj) - base);
            }
            ws.out[j] = acc;
        }
        Ok(ws.finish(v.geometry()))
    }

    /// Mass `||u||_{L^2}^2` and energy
    /// `int |grad u|^2 + int P(|u|^2)`, both conserved by the flow.
    pub fn conserved_quantities(&self, u: &SpectralField) -> (f64, f64) {
        let geom = u.geometry();
        let mass: f64 = u.coefficients().iter().map(|c| c.norm_sqr()).sum();
        let kinetic: f64 = u
            .coefficients()
            .iter()
            .zip(geom.eigenvalues())
            .map(|(c, &l)| l * c.norm_sqr())
            .sum();
        let potential: f64 = u
            .to_physical()
            .iter()
            .map(|c| self.p(c.norm_sqr()))
            .sum::<f64>()
            * geom.cell_volume();
        (mass, kinetic + potential)
    }
}

fn df_point(nl: &NonlinearitySpec, v: C64, w: C64) -> C64 {
    let r = v.norm_sqr();
    let pp = nl.p_prime(r);
    let pdp = nl.p_double_prime(r);
    (pp + pdp * r) * w + pdp * v * v * w.conj()
}

/// Grid workspace for one dealiased pointwise evaluation. Cubic and lower
/// products stay on the native grid under the 2/3 mask; higher degrees are
/// transferred to a padded grid on which the product band cannot alias back
/// into the native band.
struct Workspace {
    native: bool,
    dims: Vec<usize>,
    volume: f64,
    phys: Vec<Vec<C64>>,
    out: Vec<C64>,
}

impl Workspace {
    fn new(geom: &Arc<TorusGeometry>, nl: &NonlinearitySpec) -> Self {
        if nl.product_degree() <= 3 {
            Workspace {
                native: true,
                dims: geom.dims().to_vec(),
                volume: geom.domain_volume(),
                phys: Vec::new(),
                out: vec![C64::default(); geom.n_total()],
            }
        } else {
            let p = nl.product_degree();
            let dims: Vec<usize> = geom
                .dims()
                .iter()
                .map(|&n| ((p + 1) * n / 2 + 1).next_power_of_two())
                .collect();
            let n_total = dims.iter().product();
            Workspace {
                native: false,
                dims,
                volume: geom.domain_volume(),
                phys: Vec::new(),
                out: vec![C64::default(); n_total],
            }
        }
    }

    fn len(&self) -> usize {
        self.out.len()
    }

    /// Brings each input onto the working grid in physical space, masked.
    fn load(&mut self, fields: &[&SpectralField]) {
        let mut planner = FftPlanner::new();
        let plans: Vec<_> = self
            .dims
            .iter()
            .map(|&n| planner.plan_fft_inverse(n))
            .collect();
        for f in fields {
            let geom = f.geometry();
            let mut big = vec![C64::default(); self.len()];
            if self.native {
                for (bin, &c) in f.coefficients().iter().enumerate() {
                    if geom.two_thirds_retained(bin) {
                        big[bin] = c;
                    }
                }
                geom.fft_inverse(&mut big);
            } else {
                for (bin, &c) in f.coefficients().iter().enumerate() {
                    big[big_bin(&self.dims, &geom.index_of_bin(bin))] = c;
                }
                transform_nd(&plans, &self.dims, &mut big);
            }
            let scale = 1.0 / self.volume.sqrt();
            for c in &mut big {
                *c *= scale;
            }
            self.phys.push(big);
        }
    }

    /// Transforms the pointwise result back and masks or truncates it onto
    /// the native band.
    fn finish(mut self, geom: &Arc<TorusGeometry>) -> SpectralField {
        if self.native {
            geom.fft_forward(&mut self.out);
            let scale = self.volume.sqrt() / geom.n_total() as f64;
            let coef: Vec<C64> = self
                .out
                .iter()
                .enumerate()
                .map(|(bin, &c)| {
                    if geom.two_thirds_retained(bin) {
                        c * scale
                    } else {
                        C64::default()
                    }
                })
                .collect();
            SpectralField::from_coefficients(geom, coef).expect("dealiased product stayed finite")
        } else {
            let mut planner = FftPlanner::new();
            let plans: Vec<_> = self
                .dims
                .iter()
                .map(|&n| planner.plan_fft_forward(n))
                .collect();
            transform_nd(&plans, &self.dims, &mut self.out);
            let scale = self.volume.sqrt() / self.len() as f64;
            let mut coef = vec![C64::default(); geom.n_total()];
            for (bin, c) in coef.iter_mut().enumerate() {
                *c = self.out[big_bin(&self.dims, &geom.index_of_bin(bin))] * scale;
            }
            SpectralField::from_coefficients(geom, coef).expect("dealiased product stayed finite")
        }
    }
}

fn big_bin(dims: &[usize], k: &[i64]) -> usize {
    let mut bin = 0;
    for (axis, &ki) in k.iter().enumerate() {
        let n = dims[axis] as i64;
        let b = if ki >= 0 { ki } else { ki + n } as usize;
        bin = bin * dims[axis] + b;
    }
    bin
}

/// Coefficient arrays of Df(v) on the native grid, for integrators that
/// reuse them across stages. Only valid when the native 2/3 path applies
/// (product degree <= 3); `v` is masked before evaluation.
pub(crate) fn df_coefficients(nl: &NonlinearitySpec, v: &SpectralField) -> (Vec<f64>, Vec<C64>) {
    debug_assert!(nl.product_degree() <= 3);
    let geom = v.geometry();
    let mut masked = vec![C64::default(); geom.n_total()];
    for (bin, &c) in v.coefficients().iter().enumerate() {
        if geom.two_thirds_retained(bin) {
            masked[bin] = c;
        }
    }
    geom.fft_inverse(&mut masked);
    let scale = 1.0 / geom.domain_volume().sqrt();
    let mut a = vec![0.0; geom.n_total()];
    let mut b = vec![C64::default(); geom.n_total()];
    for j in 0..geom.n_total() {
        let vj = masked[j] * scale;
        let r = vj.norm_sqr();
        let pdp = nl.p_double_prime(r);
        a[j] = nl.p_prime(r) + pdp * r;
        b[j] = pdp * vj * vj;
    }
    (a, b)
}
