//! State-space volumes and state averages.
//!
//! Closed forms come from completing the square in the denominator
//! `S = xᵀ𝓜x + yᵀ𝓜y + c_N - 2c_N D̃ᵀx` and reducing the chart integral to a
//! single radial integral. Haar-random sampling gives an independent Monte
//! Carlo route, since the Fubini–Study volume is the unitarily invariant one.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use num_traits::CheckedMul;

use crate::error::{Error, Result};
use crate::geometry::{error_volume, volume_element, GeometryPoint};
use crate::states::{sample_haar_state, PostSelection, RngSeed, SimplexWeights};
use crate::weakvalues::{weak_values, WeakCoordinates};

/// Tolerance on the two reduction identities.
pub const REDUCTION_TOL: f64 = 1e-8;

/// Haar samples with `|<b|ψ>|^2` below this are rejected.
pub const MC_REJECT_OVERLAP: f64 = 1e-14;

/// Absolute tolerance of the radial quadratures.
pub const QUAD_TOL: f64 = 1e-10;

const MAX_BISECTIONS: u32 = 24;

/// Quadratic form of the denominator in real chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticReduction {
    /// `𝓜_ij = c_i δ_ij + c_N`, of size `(N-1) × (N-1)`.
    pub m: DMatrix<f64>,
    /// Vector of ones.
    pub dtilde: DVector<f64>,
    /// `c_i = |b_i|^{-2}` for all `N` components.
    pub c: Vec<f64>,
}

impl QuadraticReduction {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Relative deviation of `det 𝓜` from `Π c_i`.
    pub fn determinant_residual(&self) -> f64 {
        let det = self.m.clone().determinant();
        let prod: f64 = self.c.iter().product();
        (det - prod).abs() / prod
    }

    /// Deviation of `c_N - c_N^2 D̃ᵀ𝓜^{-1}D̃` from 1.
    pub fn completion_residual(&self) -> Result<f64> {
        let cn = self.c[self.dim() - 1];
        let lu = self.m.clone().lu();
        let sol = lu
            .solve(&self.dtilde)
            .ok_or_else(|| Error::SingularConfiguration("reduction matrix is singular".into()))?;
        Ok((cn - cn * cn * self.dtilde.dot(&sol) - 1.0).abs())
    }

    /// Centre `x_0 = c_N 𝓜^{-1} D̃` of the completed square.
    pub fn center(&self) -> Result<DVector<f64>> {
        let cn = self.c[self.dim() - 1];
        self.m
            .clone()
            .lu()
            .solve(&(&self.dtilde * cn))
            .ok_or_else(|| Error::SingularConfiguration("reduction matrix is singular".into()))
    }

    /// `S` evaluated from the quadratic form.
    pub fn denominator(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let cn = self.c[self.dim() - 1];
        x.dot(&(&self.m * x)) + y.dot(&(&self.m * y)) + cn - 2.0 * cn * self.dtilde.dot(x)
    }
}

/// Builds `𝓜`, `D̃` and `c` for `b` and checks the two identities.
pub fn build_reduction(b: &PostSelection) -> Result<QuadraticReduction> {
    let n = b.dim();
    let p = b.weights().as_slice();
    if let Some((index, &pi)) = p.iter().enumerate().find(|(_, &pi)| !(pi > 0.0)) {
        return Err(Error::ZeroComponent {
            index,
            modulus: pi.sqrt(),
        });
    }
    let c: Vec<f64> = p.iter().map(|pi| 1.0 / pi).collect();
    let cn = c[n - 1];
    let m = DMatrix::from_fn(n - 1, n - 1, |i, j| if i == j { c[i] + cn } else { cn });
    let red = QuadraticReduction {
        m,
        dtilde: DVector::from_element(n - 1, 1.0),
        c,
    };
    let det_res = red.determinant_residual();
    if det_res > REDUCTION_TOL {
        return Err(Error::Numerical(format!("det M residual {det_res:e}")));
    }
    let comp_res = red.completion_residual()?;
    if comp_res > REDUCTION_TOL {
        return Err(Error::Numerical(format!("completion residual {comp_res:e}")));
    }
    Ok(red)
}

/// `(k-1)!` as an exact integer.
pub fn gamma_int(k: u32) -> Result<u128> {
    if k == 0 {
        return Err(Error::Domain("Γ(0) is undefined".into()));
    }
    (1..k as u128)
        .try_fold(1u128, |acc, j| acc.checked_mul(j))
        .ok_or_else(|| Error::Numerical(format!("Γ({k}) overflows")))
}

fn gamma_f64(k: u32) -> Result<f64> {
    Ok(gamma_int(k)? as f64)
}

/// `Ω_{2N-2} = 2π^{N-1}/Γ(N-1)`, the solid angle in `2N-2` dimensions.
pub fn solid_angle_even(n: usize) -> Result<f64> {
    check_dim(n)?;
    Ok(2.0 * PI.powi(n as i32 - 1) / gamma_f64(n as u32 - 1)?)
}

fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    Ok(())
}

/// `Ω_{2N-2} ∫_0^∞ R^{2N-3} (R^2+1)^{-M} dR` for `M ∈ {N, 2N}`.
pub fn radial_integral_closed(n: usize, m: usize) -> Result<f64> {
    check_dim(n)?;
    let k = n as u32;
    let radial = if m == n {
        1.0 / (2.0 * (n as f64 - 1.0))
    } else if m == 2 * n {
        gamma_f64(k - 1)? * gamma_f64(k + 1)? / (2.0 * gamma_f64(2 * k)?)
    } else {
        return Err(Error::Unsupported(format!(
            "closed radial integral for M = {m}, N = {n}; use radial_integral_numeric"
        )));
    };
    Ok(solid_angle_even(n)? * radial)
}

/// Quadrature version of [`radial_integral_closed`] for any real `M > N-1`.
///
/// With `x = R^2` and `x = t/(1-t)` the radial part becomes
/// `½ ∫_0^1 t^{N-2} (1-t)^{M-N} dt`.
pub fn radial_integral_numeric(n: usize, m: f64, tol: f64) -> Result<f64> {
    check_dim(n)?;
    if !(m > n as f64 - 1.0) {
        return Err(Error::Domain(format!("radial integral diverges for M = {m}, N = {n}")));
    }
    let a = n as i32 - 2;
    let e = m - n as f64;
    let radial = adaptive_integrate(&|t: f64| 0.5 * t.powi(a) * (1.0 - t).powf(e), 0.0, 1.0, tol)?;
    Ok(solid_angle_even(n)? * radial)
}

/// Double-exponential quadrature, bisecting until the error estimate is
/// below `tol`.
pub(crate) fn adaptive_integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
        let out = quadrature::integrate(f, a, b, tol);
        if out.error_estimate <= tol {
            return Ok(out.integral);
        }
        if depth >= MAX_BISECTIONS {
            return Err(Error::Quadrature {
                tolerance: tol,
                estimate: out.error_estimate,
            });
        }
        let mid = 0.5 * (a + b);
        Ok(go(f, a, mid, 0.5 * tol, depth + 1)? + go(f, mid, b, 0.5 * tol, depth + 1)?)
    }
    go(f, a, b, tol, 0)
}

/// `V_N = 4^{N-1} π^{N-1} / ((N-1) Γ(N-1))`.
pub fn total_volume_closed(n: usize) -> Result<f64> {
    check_dim(n)?;
    let k = n as i32 - 1;
    Ok(4f64.powi(k) * PI.powi(k) / ((n as f64 - 1.0) * gamma_f64(n as u32 - 1)?))
}

/// Exact `4^{2N-2} Γ(N) Γ(N+1) / Γ(2N)`.
pub fn error_volume_coefficient(n: usize) -> Result<Ratio<u128>> {
    check_dim(n)?;
    let k = n as u32;
    let overflow = || Error::Numerical(format!("coefficient for N = {n} overflows"));
    let pow = 4u128.checked_pow(2 * k - 2).ok_or_else(overflow)?;
    let num = Ratio::from_integer(pow)
        .checked_mul(&Ratio::from_integer(gamma_int(k)?))
        .ok_or_else(overflow)?;
    let frac = Ratio::new(gamma_int(k + 1)?, gamma_int(2 * k)?);
    num.checked_mul(&frac).ok_or_else(overflow)
}

fn ratio_to_f64(r: &Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn check_delta(delta_s: f64) -> Result<()> {
    if !(delta_s > 0.0) || !delta_s.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta_s must be positive, got {delta_s}"
        )));
    }
    Ok(())
}

/// `⟨ΔV_N^err⟩` as a function of the weights `|b_i|^2` alone.
pub fn avg_error_volume_from_weights(p: &SimplexWeights, delta_s: f64) -> Result<f64> {
    check_delta(delta_s)?;
    let n = p.dim();
    let coeff = ratio_to_f64(&error_volume_coefficient(n)?);
    let prod: f64 = p.as_slice().iter().product();
    Ok(coeff * delta_s.powi(2 * n as i32 - 2) / prod)
}

/// `⟨ΔV_N^err⟩ = 4^{2N-2} Δ_s^{2N-2} Γ(N)Γ(N+1) / (Π|b_i|^2 Γ(2N))`.
pub fn avg_error_volume_closed(n: usize, b: &PostSelection, delta_s: f64) -> Result<f64> {
    if b.dim() != n {
        return Err(Error::DimensionMismatch(n, b.dim()));
    }
    avg_error_volume_from_weights(b.weights(), delta_s)
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct IntegralEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub rejected: u64,
}

#[derive(Clone, Copy, Debug)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Self = Self {
        count: 0,
        mean: 0.0,
        m2: 0.0,
    };

    fn merge(a: Self, b: Self) -> Self {
        if a.count == 0 {
            return b;
        }
        if b.count == 0 {
            return a;
        }
        let count = a.count + b.count;
        let (na, nb, n) = (a.count as f64, b.count as f64, count as f64);
        let delta = b.mean - a.mean;
        Self {
            count,
            mean: a.mean + delta * nb / n,
            m2: a.m2 + b.m2 + delta * delta * na * nb / n,
        }
    }

    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::EMPTY;
        }
        let mean = pairwise_sum(values) / values.len() as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        Self {
            count: values.len() as u64,
            mean,
            m2: pairwise_sum(&dev),
        }
    }
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

fn pairwise_merge(parts: &[Moments]) -> Moments {
    match parts {
        [] => Moments::EMPTY,
        [one] => *one,
        _ => {
            let (l, r) = parts.split_at(parts.len() / 2);
            Moments::merge(pairwise_merge(l), pairwise_merge(r))
        }
    }
}

struct WorkerResult {
    moments: Moments,
    rejected: u64,
}

fn mc_worker<F>(f: &F, b: &PostSelection, count: u64, seed: RngSeed) -> Result<WorkerResult>
where
    F: Fn(&GeometryPoint) -> Result<f64>,
{
    let mut rng = seed.rng();
    let overlaps = b.overlaps();
    let mut values = Vec::with_capacity(count as usize);
    let mut rejected = 0;
    for _ in 0..count {
        let psi = sample_haar_state(b.dim(), &mut rng)?;
        let ov: Complex64 = overlaps.iter().zip(psi.as_slice()).map(|(bi, a)| bi * a).sum();
        if ov.norm_sqr() < MC_REJECT_OVERLAP {
            rejected += 1;
            continue;
        }
        let pt = GeometryPoint::from_weak_values(&weak_values(&psi, b)?, b.clone())?;
        values.push(f(&pt)?);
    }
    Ok(WorkerResult {
        moments: Moments::of(&values),
        rejected,
    })
}

/// Haar average of `f` over pure states in the chart of `b`, single worker.
pub fn mc_state_average<F>(f: F, b: &PostSelection, n_samples: u64, seed: RngSeed) -> Result<IntegralEstimate>
where
    F: Fn(&GeometryPoint) -> Result<f64> + Sync,
{
    mc_state_average_parallel(f, b, n_samples, seed, 1)
}

/// Haar average split over `workers` threads.
///
/// Worker `k` draws from `seed.substream(k)` and the per-worker moments are
/// combined pairwise in worker order, so the result depends only on the
/// seed and the worker count.
pub fn mc_state_average_parallel<F>(
    f: F,
    b: &PostSelection,
    n_samples: u64,
    seed: RngSeed,
    workers: usize,
) -> Result<IntegralEstimate>
where
    F: Fn(&GeometryPoint) -> Result<f64> + Sync,
{
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    if workers == 0 {
        return Err(Error::InvalidParameter("workers must be at least 1".into()));
    }
    let k = workers as u64;
    let share = |i: u64| n_samples / k + u64::from(i < n_samples % k);
    let results: Vec<Result<WorkerResult>> = if workers == 1 {
        vec![mc_worker(&f, b, n_samples, seed.substream(0))]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..k)
                .map(|i| {
                    let f = &f;
                    scope.spawn(move || mc_worker(f, b, share(i), seed.substream(i)))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numerical("worker panicked".into())))
                })
                .collect()
        })
    };
    let mut parts = Vec::with_capacity(workers);
    let mut rejected = 0;
    for r in results {
        let r = r?;
        parts.push(r.moments);
        rejected += r.rejected;
    }
    let total = pairwise_merge(&parts);
    if total.count == 0 {
        return Err(Error::NoAcceptedSamples(n_samples as usize));
    }
    let var = if total.count > 1 {
        total.m2 / (total.count - 1) as f64
    } else {
        0.0
    };
    Ok(IntegralEstimate {
        value: total.mean,
        stderr: (var / total.count as f64).sqrt(),
        samples: total.count,
        rejected,
    })
}

/// Monte Carlo estimate of `∫ dV_N` in the chart of `b`.
///
/// For a density `f` on the chart, `E_Haar[f/√g] = ∫f / V_N`. A Gaussian
/// `f` centred on the chart point of `|b>` with width `sqrt(min p)/2` gives
/// `V_N = ∫f / E_Haar[f/√g]`; the error follows by the delta method.
pub fn mc_total_volume(b: &PostSelection, n_samples: u64, seed: RngSeed, workers: usize) -> Result<IntegralEstimate> {
    let n = b.dim();
    let p = b.weights().as_slice();
    let sigma = 0.5 * p.iter().cloned().fold(f64::INFINITY, f64::min).sqrt();
    let centre: Vec<Complex64> = p[..n - 1].iter().map(|&pi| Complex64::new(pi, 0.0)).collect();
    let mass = (2.0 * PI * sigma * sigma).powi(n as i32 - 1);
    let ratio = |pt: &GeometryPoint| -> Result<f64> {
        let r2: f64 = pt
            .coords()
            .free()
            .iter()
            .zip(&centre)
            .map(|(w, c)| (w - c).norm_sqr())
            .sum();
        Ok((-0.5 * r2 / (sigma * sigma)).exp() / volume_element(pt)?)
    };
    let est = mc_state_average_parallel(ratio, b, n_samples, seed, workers)?;
    if !(est.value > 0.0) {
        return Err(Error::Numerical("volume ratio estimate vanished".into()));
    }
    let value = mass / est.value;
    Ok(IntegralEstimate {
        value,
        stderr: value * est.stderr / est.value,
        ..est
    })
}

/// Direct two-dimensional quadrature of `∫ sqrt(g) dx dy` for a qubit.
///
/// Polar coordinates around the chart point of `|b>` with `r = t/(1-t)`.
pub fn volume_quadrature_qubit(b: &PostSelection, tol: f64) -> Result<f64> {
    if b.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "direct quadrature needs N = 2, got {}",
            b.dim()
        )));
    }
    let x0 = b.weights().as_slice()[0];
    let failure = std::cell::RefCell::new(None);
    let radial = |theta: f64| -> f64 {
        let (s, c) = theta.sin_cos();
        let inner = |t: f64| -> f64 {
            if t >= 1.0 {
                return 0.0;
            }
            let r = t / (1.0 - t);
            let w = Complex64::new(x0 + r * c, r * s);
            let jac = r / ((1.0 - t) * (1.0 - t));
            let val = WeakCoordinates::new(vec![w])
                .and_then(|coords| GeometryPoint::new(coords, b.clone()))
                .and_then(|pt| volume_element(&pt));
            match val {
                Ok(v) => v * jac,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        match adaptive_integrate(&inner, 0.0, 1.0, tol) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let total = adaptive_integrate(&radial, 0.0, 2.0 * PI, tol * 2.0 * PI)?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// `𝓘 = -ln ΔV^err = -(2N-2) ln 2 + Σ ln|b_i|^2 + N ln S - (2N-2) ln(2Δ_s)`.
pub fn information(pt: &GeometryPoint, delta_s: f64) -> Result<f64> {
    check_delta(delta_s)?;
    let n = pt.dim() as f64;
    let s = pt.denominator();
    let log_p: f64 = pt.post_selection().weights().as_slice().iter().map(|p| p.ln()).sum();
    Ok(-(2.0 * n - 2.0) * 2f64.ln() + log_p + n * s.ln() - (2.0 * n - 2.0) * (2.0 * delta_s).ln())
}

/// `Ĩ_N = ∫_0^∞ R^{2N-3} ln(1+R^2) / (1+R^2)^N dR` by quadrature.
///
/// With `x = R^2` this is `½ ∫_0^∞ x^{N-2} ln(1+x) / (1+x)^N dx`, mapped to
/// `(0, 1)` by `x = t/(1-t)`.
pub fn tilde_i(n: usize) -> Result<f64> {
    check_dim(n)?;
    let a = n as i32 - 2;
    let integrand = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let x = t / (1.0 - t);
        let dx = 1.0 / ((1.0 - t) * (1.0 - t));
        0.5 * x.powi(a) * x.ln_1p() / (1.0 + x).powi(n as i32) * dx
    };
    adaptive_integrate(&integrand, 0.0, 1.0, QUAD_TOL)
}

/// Haar average of `ln S`, `4^{N-1} Ω_{2N-2} Ĩ_N / V_N`.
pub fn mean_log_denominator(n: usize) -> Result<f64> {
    let k = n as i32 - 1;
    Ok(4f64.powi(k) * solid_angle_even(n)? * tilde_i(n)? / total_volume_closed(n)?)
}

/// The `b`-independent part of `⟨𝓘⟩`.
pub fn avg_information_offset(n: usize, delta_s: f64) -> Result<f64> {
    check_delta(delta_s)?;
    let k = 2.0 * n as f64 - 2.0;
    Ok(-k * 2f64.ln() - k * (2.0 * delta_s).ln() + n as f64 * mean_log_denominator(n)?)
}

/// `⟨𝓘⟩` as a function of the weights, given a precomputed offset.
pub fn avg_information_with_offset(p: &SimplexWeights, offset: f64) -> f64 {
    offset + p.as_slice().iter().map(|x| x.ln()).sum::<f64>()
}

/// State-averaged information `⟨𝓘⟩(b)`.
pub fn avg_information(n: usize, b: &PostSelection, delta_s: f64) -> Result<f64> {
    if b.dim() != n {
        return Err(Error::DimensionMismatch(n, b.dim()));
    }
    Ok(avg_information_with_offset(
        b.weights(),
        avg_information_offset(n, delta_s)?,
    ))
}

/// Haar average of the error volume, for cross-checking the closed form.
pub fn mc_avg_error_volume(
    b: &PostSelection,
    delta_s: f64,
    n_samples: u64,
    seed: RngSeed,
    workers: usize,
) -> Result<IntegralEstimate> {
    check_delta(delta_s)?;
    mc_state_average_parallel(|pt| error_volume(pt, delta_s), b, n_samples, seed, workers)
}
