//! Kähler geometry of the pure-state space in weak-value coordinates.
//!
//! Points are given by the free weak values `w_1 … w_{N-1}` (with
//! `w_N = 1 - Σ w_i`) and the post-selection `b`. Writing
//! `S = Σ_i |w_i/b_i|^2`, the potential is `K = 4 ln S` and the line element
//! is `dl^2 = Σ_{jk} G_{jk̄} dw_j dw̄_k` with `G_{jk̄} = ∂_j ∂_k̄ K`.
//!
//! Real coordinates are interleaved, `(x_1, y_1, x_2, y_2, …)` with
//! `w_j = x_j + i y_j`. For `G = A + iB` the real metric has blocks
//! `[[A_jk, B_jk], [-B_jk, A_jk]]`, so its determinant is `(det G)^2`.
//!
//! Three independent routes to the metric are provided: the closed form
//! [`metric_from_kahler`], a finite-difference Hessian of the potential
//! [`metric_from_potential_fd`], and the pullback of `4 Σ d<T_i>^2`
//! through the reconstruction map [`metric_pullback`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::GeneratorBasis;
use crate::states::{density_from_state_with, PostSelection, PureState};
use crate::weakvalues::{reconstruct_state, weak_values, WeakCoordinates, WeakValueVector};

/// Points whose `S` falls below this are rejected.
pub const SINGULAR_S: f64 = 1e-12;

/// Central-difference step as a fraction of the local length scale
/// `sqrt(S / Σ c_i)` of the chart.
pub const FD_STEP: f64 = 1e-2;

/// A point of the state space in the weak-value chart of a given `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryPoint {
    coords: WeakCoordinates,
    b: PostSelection,
}

impl GeometryPoint {
    pub fn new(coords: WeakCoordinates, b: PostSelection) -> Result<Self> {
        if coords.dim() != b.dim() {
            return Err(Error::DimensionMismatch(coords.dim(), b.dim()));
        }
        let pt = Self { coords, b };
        let s = pt.denominator();
        if !(s > SINGULAR_S) {
            return Err(Error::Domain(format!("S = {s:e} is not positive")));
        }
        Ok(pt)
    }

    pub fn from_weak_values(w: &WeakValueVector, b: PostSelection) -> Result<Self> {
        Self::new(w.coordinates(), b)
    }

    /// The chart point of a state.
    pub fn from_state(psi: &PureState, b: &PostSelection) -> Result<Self> {
        Self::from_weak_values(&weak_values(psi, b)?, b.clone())
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    pub fn coords(&self) -> &WeakCoordinates {
        &self.coords
    }

    pub fn post_selection(&self) -> &PostSelection {
        &self.b
    }

    pub fn weak_values(&self) -> WeakValueVector {
        self.coords.to_vector()
    }

    /// `S = Σ_i |w_i|^2 / |b_i|^2`.
    pub fn denominator(&self) -> f64 {
        self.weak_values()
            .as_slice()
            .iter()
            .zip(self.b.weights().as_slice())
            .map(|(w, p)| w.norm_sqr() / p)
            .sum()
    }

    fn with_real(&self, xy: &[f64]) -> Result<Self> {
        Self::new(WeakCoordinates::from_real(xy)?, self.b.clone())
    }

    fn weight_product(&self) -> f64 {
        self.b.weights().as_slice().iter().product()
    }
}

/// Complex metric `G_{jk̄}` at a point and the determinant of the
/// corresponding real metric.
#[derive(Clone, Debug)]
pub struct KahlerMetricAtPoint {
    pub dim: usize,
    pub g: DMatrix<Complex64>,
    pub g_real_det: f64,
}

impl KahlerMetricAtPoint {
    fn from_complex(dim: usize, g: DMatrix<Complex64>) -> Self {
        let g_real_det = hermitian_determinant(&g).powi(2);
        Self { dim, g, g_real_det }
    }

    /// The `2(N-1) × 2(N-1)` real metric in interleaved coordinates.
    pub fn real_metric(&self) -> DMatrix<f64> {
        real_from_hermitian(&self.g)
    }

    pub fn hermitian_deviation(&self) -> f64 {
        crate::linalg::hermitian_deviation(&self.g)
    }

    /// Sylvester's criterion on the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        let n = self.g.nrows();
        (1..=n).all(|k| {
            let minor = self.g.view((0, 0), (k, k)).into_owned().determinant();
            minor.re > 0.0 && minor.im.abs() <= 1e-9 * minor.re.max(1.0)
        })
    }
}

/// `det G` of a Hermitian matrix, taken after symmetric diagonal scaling so
/// that widely different weights `|b_i|^2` do not cost precision.
fn hermitian_determinant(g: &DMatrix<Complex64>) -> f64 {
    let d: Vec<f64> = g.diagonal().iter().map(|z| z.re).collect();
    if d.iter().all(|x| *x > 0.0) {
        let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |j, k| g[(j, k)] / (d[j] * d[k]).sqrt());
        if let Some(ch) = scaled.cholesky() {
            let l = ch.l_dirty();
            let inner: f64 = (0..g.nrows()).map(|j| l[(j, j)].norm_sqr()).product();
            return d.iter().product::<f64>() * inner;
        }
    }
    g.clone().determinant().re
}

pub(crate) fn real_from_hermitian(g: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for k in 0..n {
            let z = g[(j, k)];
            r[(2 * j, 2 * k)] = z.re;
            r[(2 * j + 1, 2 * k + 1)] = z.re;
            r[(2 * j, 2 * k + 1)] = z.im;
            r[(2 * j + 1, 2 * k)] = -z.im;
        }
    }
    r
}

/// Hermitian part `G_{jk̄} = (g_xx + g_yy)/2 + i (g_xy - g_xyᵀ)/2` of a real
/// symmetric metric.
pub fn hermitian_part(real: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = real.nrows() / 2;
    DMatrix::from_fn(n, n, |j, k| {
        let xx = real[(2 * j, 2 * k)];
        let yy = real[(2 * j + 1, 2 * k + 1)];
        let xy_jk = real[(2 * j, 2 * k + 1)];
        let xy_kj = real[(2 * k, 2 * j + 1)];
        Complex64::new(0.5 * (xx + yy), 0.5 * (xy_jk - xy_kj))
    })
}

/// Holomorphic block `G_{jk}`, the coefficient of `dw_j dw_k`; it vanishes
/// for a Hermitian metric.
pub fn holomorphic_part(real: &DMatrix<f64>) -> DMatrix<Complex64> {
    let n = real.nrows() / 2;
    DMatrix::from_fn(n, n, |j, k| {
        let xx = real[(2 * j, 2 * k)];
        let yy = real[(2 * j + 1, 2 * k + 1)];
        let xy_jk = real[(2 * j, 2 * k + 1)];
        let xy_kj = real[(2 * k, 2 * j + 1)];
        Complex64::new(0.25 * (xx - yy), -0.25 * (xy_jk + xy_kj))
    })
}

/// `K = 4 ln S`.
pub fn kahler_potential(pt: &GeometryPoint) -> Result<f64> {
    let s = pt.denominator();
    if !(s > 0.0) {
        return Err(Error::Domain(format!("logarithm of S = {s:e}")));
    }
    Ok(4.0 * s.ln())
}

/// Closed-form `G_{jk̄} = 4 (S ∂_j∂_k̄ S - ∂_k̄ S ∂_j S) / S^2`.
///
/// The numerator is evaluated through the Lagrange identity as
/// `Σ_{i<l} m^{(j)}_{il} conj(m^{(k)}_{il})` with
/// `m^{(j)}_{il} = u_i a_{j,l} - u_l a_{j,i}`, where `u_i = w_i/|b_i|` and
/// `a_j = ∂u/∂w_j`. This avoids the cancellation between the two terms far
/// from the origin of the chart.
pub fn metric_from_kahler(pt: &GeometryPoint) -> Result<KahlerMetricAtPoint> {
    let n = pt.dim();
    let s = pt.denominator();
    if !(s > SINGULAR_S) {
        return Err(Error::Domain(format!("S = {s:e}")));
    }
    let sqrt_c: Vec<f64> = pt.b.weights().as_slice().iter().map(|p| 1.0 / p.sqrt()).collect();
    let u: Vec<Complex64> = pt
        .weak_values()
        .as_slice()
        .iter()
        .zip(&sqrt_c)
        .map(|(w, sc)| w * sc)
        .collect();
    // a_j has entries sqrt(c_j) at j and -sqrt(c_N) at N-1
    let a = |j: usize, i: usize| -> f64 {
        if i == j {
            sqrt_c[j]
        } else if i == n - 1 {
            -sqrt_c[n - 1]
        } else {
            0.0
        }
    };
    let free = n - 1;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |l| (i, l))).collect();
    let minors: Vec<Vec<Complex64>> = (0..free)
        .map(|j| pairs.iter().map(|&(i, l)| u[i] * a(j, l) - u[l] * a(j, i)).collect())
        .collect();
    let scale = 4.0 / (s * s);
    let m = DMatrix::from_fn(free, pairs.len(), |j, q| minors[j][q]);
    let g = (&m * m.adjoint()).map(|z| z * scale);
    // det(M M†) from the R factor of M†, which avoids squaring the
    // condition number far from the chart origin
    let r = m.adjoint().qr().unpack_r();
    let gram: f64 = (0..free).map(|j| r[(j, j)].norm_sqr()).product();
    let det = scale.powi(free as i32) * gram;
    Ok(KahlerMetricAtPoint {
        dim: n,
        g,
        g_real_det: det * det,
    })
}

fn fd_steps(pt: &GeometryPoint) -> Vec<f64> {
    let c: f64 = pt.b.weights().as_slice().iter().map(|p| 1.0 / p).sum();
    let h = FD_STEP * (pt.denominator() / c).sqrt();
    vec![h; 2 * (pt.dim() - 1)]
}

/// Mixed second derivative of a scalar function by central differences.
fn second_derivative<F>(f: &F, x: &[f64], a: usize, b: usize, ha: f64, hb: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let eval = |da: f64, db: f64| -> Result<f64> {
        let mut y = x.to_vec();
        y[a] += da;
        y[b] += db;
        f(&y)
    };
    if a == b {
        let f0 = f(x)?;
        Ok((eval(ha, 0.0)? - 2.0 * f0 + eval(-ha, 0.0)?) / (ha * ha))
    } else {
        Ok((eval(ha, hb)? - eval(ha, -hb)? - eval(-ha, hb)? + eval(-ha, -hb)?) / (4.0 * ha * hb))
    }
}

/// Richardson-extrapolated central difference, halving the steps while the
/// function cannot be evaluated.
fn second_derivative_checked<F>(f: &F, x: &[f64], a: usize, b: usize, ha: f64, hb: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let (mut ha, mut hb) = (ha, hb);
    for _ in 0..20 {
        let coarse = second_derivative(f, x, a, b, ha, hb);
        let fine = second_derivative(f, x, a, b, 0.5 * ha, 0.5 * hb);
        match (coarse, fine) {
            (Ok(d1), Ok(d2)) if d1.is_finite() && d2.is_finite() => return Ok((4.0 * d2 - d1) / 3.0),
            _ => {
                ha *= 0.5;
                hb *= 0.5;
            }
        }
    }
    Err(Error::StepAdjustment { direction: a })
}

/// `G_{jk̄} = ¼[(∂x_j∂x_k + ∂y_j∂y_k) K + i(∂x_j∂y_k - ∂y_j∂x_k) K]` from a
/// central-difference Hessian of [`kahler_potential`].
pub fn metric_from_potential_fd(pt: &GeometryPoint) -> Result<KahlerMetricAtPoint> {
    let x0 = pt.coords.to_real();
    let h = fd_steps(pt);
    let k = |xy: &[f64]| kahler_potential(&pt.with_real(xy)?);
    let m = x0.len();
    let mut hess = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let d = second_derivative_checked(&k, &x0, a, b, h[a], h[b])?;
            hess[(a, b)] = d;
            hess[(b, a)] = d;
        }
    }
    let free = m / 2;
    let g = DMatrix::from_fn(free, free, |j, l| {
        let re = hess[(2 * j, 2 * l)] + hess[(2 * j + 1, 2 * l + 1)];
        let im = hess[(2 * j, 2 * l + 1)] - hess[(2 * j + 1, 2 * l)];
        Complex64::new(0.25 * re, 0.25 * im)
    });
    Ok(KahlerMetricAtPoint::from_complex(pt.dim(), g))
}

fn bloch_at(pt: &GeometryPoint, basis: &GeneratorBasis, xy: &[f64]) -> Result<DVector<f64>> {
    let moved = pt.with_real(xy)?;
    let psi = reconstruct_state(&moved.weak_values(), &moved.b)?;
    Ok(DVector::from_vec(density_from_state_with(&psi, basis).bloch))
}

fn jacobian_column(pt: &GeometryPoint, basis: &GeneratorBasis, x0: &[f64], a: usize, h: f64) -> Result<DVector<f64>> {
    let central = |h: f64| -> Result<DVector<f64>> {
        let mut plus = x0.to_vec();
        let mut minus = x0.to_vec();
        plus[a] += h;
        minus[a] -= h;
        Ok((bloch_at(pt, basis, &plus)? - bloch_at(pt, basis, &minus)?) / (2.0 * h))
    };
    let mut h = h;
    for _ in 0..20 {
        match (central(h), central(0.5 * h)) {
            (Ok(d1), Ok(d2)) if d1.iter().chain(d2.iter()).all(|v| v.is_finite()) => {
                return Ok((d2 * 4.0 - d1) / 3.0);
            }
            _ => h *= 0.5,
        }
    }
    Err(Error::StepAdjustment { direction: a })
}

/// Real metric `g_ab = 4 Σ_i ∂_a<T_i> ∂_b<T_i>` obtained by differentiating
/// the chain (x, y) → reconstructed state → ρ → generator coordinates.
///
/// `ρ` does not depend on the global phase, so the phase pivot of the
/// reconstruction has no effect on the derivative.
pub fn pullback_real_metric(pt: &GeometryPoint, basis: &GeneratorBasis) -> Result<DMatrix<f64>> {
    if basis.dim() != pt.dim() {
        return Err(Error::DimensionMismatch(basis.dim(), pt.dim()));
    }
    let x0 = pt.coords.to_real();
    let h = fd_steps(pt);
    let cols: Vec<DVector<f64>> = (0..x0.len())
        .map(|a| jacobian_column(pt, basis, &x0, a, h[a]))
        .collect::<Result<_>>()?;
    let jac = DMatrix::from_columns(&cols);
    Ok(jac.transpose() * jac * 4.0)
}

/// Metric from [`pullback_real_metric`]; the determinant is taken directly
/// from the real metric.
pub fn metric_pullback(pt: &GeometryPoint, basis: &GeneratorBasis) -> Result<KahlerMetricAtPoint> {
    let real = pullback_real_metric(pt, basis)?;
    Ok(KahlerMetricAtPoint {
        dim: pt.dim(),
        g: hermitian_part(&real),
        g_real_det: real.determinant(),
    })
}

fn four_pow(k: i32) -> f64 {
    4f64.powi(k)
}

/// `g_N = 4^{2N-2} / (Π|b_i|^4 S^{2N})`.
pub fn metric_determinant_closed(pt: &GeometryPoint) -> Result<f64> {
    let n = pt.dim() as i32;
    let s = pt.denominator();
    if !(s > SINGULAR_S) {
        return Err(Error::Domain(format!("S = {s:e}")));
    }
    let prod = pt.weight_product();
    Ok(four_pow(2 * n - 2) / (prod * prod * s.powi(2 * n)))
}

/// `sqrt(g_N) = 4^{N-1} / (Π|b_i|^2 S^N)`, the density against `Π dx_i dy_i`.
pub fn volume_element(pt: &GeometryPoint) -> Result<f64> {
    let n = pt.dim() as i32;
    let s = pt.denominator();
    if !(s > SINGULAR_S) {
        return Err(Error::Domain(format!("S = {s:e}")));
    }
    Ok(four_pow(n - 1) / (pt.weight_product() * s.powi(n)))
}

/// Volume of the error box of half-width `Δ_s` in each of the `2N-2` real
/// directions: `sqrt(g_N) (2Δ_s)^{2N-2}`.
pub fn error_volume(pt: &GeometryPoint, delta_s: f64) -> Result<f64> {
    if !(delta_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta_s must be positive, got {delta_s}"
        )));
    }
    let n = pt.dim() as i32;
    Ok(volume_element(pt)? * (2.0 * delta_s).powi(2 * n - 2))
}

/// Relative residual of `g_N = 4^{2N-2} Π|b_i|^{-4} e^{-N K/2}` with `g_N`
/// taken from the analytic metric.
pub fn kg_relation_residual(pt: &GeometryPoint) -> Result<f64> {
    let n = pt.dim() as i32;
    let g = metric_from_kahler(pt)?.g_real_det;
    let k = kahler_potential(pt)?;
    let prod = pt.weight_product();
    let predicted = four_pow(2 * n - 2) / (prod * prod) * (-(n as f64) * k / 2.0).exp();
    Ok((g - predicted).abs() / g)
}

/// Frobenius-norm relative difference `‖a - b‖ / ‖b‖`.
pub fn relative_difference(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let base: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (diff / base).sqrt()
}
