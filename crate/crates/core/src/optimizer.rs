//! Optimization of the post-selection weights `p_i = |b_i|^2`.
//!
//! Both state-averaged objectives depend on `p` only through `Σ ln p_i`, so
//! the search runs entropic mirror descent on
//! `Σ [(N p_i - 1) - ln(N p_i)]`. On the simplex this equals `-Σ ln(N p_i)`,
//! but every term is nonnegative and keeps full relative precision near the
//! uniform point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{error_volume, GeometryPoint};
use crate::stateavg::{avg_error_volume_from_weights, avg_information_offset, avg_information_with_offset};
use crate::states::{PostSelection, PureState, SimplexWeights};

pub const MAX_ITERATIONS: usize = 100_000;
pub const INITIAL_STEP: f64 = 0.1;
const STEP_GROWTH: f64 = 1.5;
const MIN_STEP: f64 = 1e-300;

/// Finite-difference step used to classify the fixed-state stationary point.
pub const STATIONARY_FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct OptimizationResult {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sqrt(Σ p_i (g_i - ḡ)^2)` for the gradient `g` of `-Σ ln p_i`.
    pub gradient_norm: f64,
    /// Signed log-distance of the objective from its optimum, at the start
    /// and after every accepted step: `ln(⟨ΔV⟩/⟨ΔV⟩_min)` when minimizing and
    /// `⟨𝓘⟩ - ⟨𝓘⟩_max` when maximizing.
    pub trace: Vec<f64>,
}

/// The minimized objective, `⟨ΔV^err⟩` at weights `p`.
pub fn error_objective(p: &SimplexWeights, delta_s: f64) -> Result<f64> {
    avg_error_volume_from_weights(p, delta_s)
}

fn centred_log(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .map(|x| {
            let d = n * x - 1.0;
            d - d.ln_1p()
        })
        .sum()
}

fn projected_gradient_norm(p: &[f64]) -> f64 {
    let n = p.len() as f64;
    p.iter().map(|x| (n * x - 1.0).powi(2) / x).sum::<f64>().sqrt()
}

fn mirror_step(p: &[f64], eta: f64) -> Vec<f64> {
    let expo: Vec<f64> = p.iter().map(|x| eta / x).collect();
    let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = p.iter().zip(&expo).map(|(x, e)| x * (e - top).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Runs the descent; `value` maps weights to the reported objective and
/// `sign` orients the recorded trace.
fn descend(
    n: usize,
    init: &SimplexWeights,
    tol: f64,
    value: &dyn Fn(&SimplexWeights) -> Result<f64>,
    sign: f64,
) -> Result<OptimizationResult> {
    if init.dim() != n {
        return Err(Error::DimensionMismatch(n, init.dim()));
    }
    if !init.is_interior() {
        return Err(Error::InvalidInit);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut p = init.as_slice().to_vec();
    let mut f = centred_log(&p);
    value(init)?;
    let mut trace = vec![sign * f];
    let mut eta = INITIAL_STEP;
    let mut iterations = 0;
    let mut grad = projected_gradient_norm(&p);
    while grad > tol && iterations < MAX_ITERATIONS && eta > MIN_STEP {
        iterations += 1;
        let q = mirror_step(&p, eta);
        let fq = centred_log(&q);
        if fq < f {
            p = q;
            f = fq;
            trace.push(sign * f);
            grad = projected_gradient_norm(&p);
            eta *= STEP_GROWTH;
        } else {
            eta *= 0.5;
        }
    }
    let weights = SimplexWeights::renormalized(p);
    Ok(OptimizationResult {
        objective: value(&weights)?,
        weights,
        iterations,
        converged: grad <= tol,
        gradient_norm: grad,
        trace,
    })
}

/// Minimizes `⟨ΔV^err⟩ ∝ 1/Π p_i` over the open simplex.
pub fn minimize_avg_error(n: usize, delta_s: f64, init: &SimplexWeights, tol: f64) -> Result<OptimizationResult> {
    error_objective(init, delta_s)?;
    descend(n, init, tol, &|p| error_objective(p, delta_s), 1.0)
}

/// Maximizes `⟨𝓘⟩ = Σ ln p_i + const` over the open simplex.
pub fn maximize_avg_information(n: usize, delta_s: f64, init: &SimplexWeights, tol: f64) -> Result<OptimizationResult> {
    let offset = avg_information_offset(n, delta_s)?;
    descend(n, init, tol, &|p| Ok(avg_information_with_offset(p, offset)), -1.0)
}

/// Weights `(|ψ_-|^2, |ψ_+|^2)` at which the error volume of a fixed qubit
/// state is stationary in `|b_±|^2`.
///
/// For a basis state the point lies on the boundary of the simplex and is
/// only reached as a limit. Such a post-selection needs the state to be
/// known, so it has no use for tomography of an unknown state.
pub fn fixed_state_stationary_qubit(psi: &PureState) -> Result<SimplexWeights> {
    if psi.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "stationary point needs N = 2, got {}",
            psi.dim()
        )));
    }
    let a = psi.as_slice();
    SimplexWeights::new(vec![a[1].norm_sqr(), a[0].norm_sqr()])
        .or_else(|_| Ok(SimplexWeights::renormalized(vec![a[1].norm_sqr(), a[0].norm_sqr()])))
}

/// Error volume of `ψ` seen through the real post-selection with weights `p`.
pub fn fixed_state_error_volume(psi: &PureState, p: &SimplexWeights, delta_s: f64) -> Result<f64> {
    let b = PostSelection::from_weights(p)?;
    error_volume(&GeometryPoint::from_state(psi, &b)?, delta_s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Minimum,
    Maximum,
    Flat,
}

/// Derivatives of the fixed-state error volume along the qubit simplex at
/// the stationary point.
#[derive(Clone, Debug, Serialize)]
pub struct StationaryAnalysis {
    pub weights: SimplexWeights,
    pub value: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
    pub curvature: Curvature,
}

/// Central differences in `p = |b_+|^2` around [`fixed_state_stationary_qubit`].
pub fn analyze_fixed_state_qubit(psi: &PureState, delta_s: f64) -> Result<StationaryAnalysis> {
    let weights = fixed_state_stationary_qubit(psi)?;
    let p0 = weights.as_slice()[0];
    let h = STATIONARY_FD_STEP;
    if p0 - h <= 0.0 || p0 + h >= 1.0 {
        return Err(Error::Domain(format!("stationary point p = {p0} lies on the boundary")));
    }
    let at = |p: f64| fixed_state_error_volume(psi, &SimplexWeights::renormalized(vec![p, 1.0 - p]), delta_s);
    let (fm, f0, fp) = (at(p0 - h)?, at(p0)?, at(p0 + h)?);
    let first = (fp - fm) / (2.0 * h);
    let second = (fp - 2.0 * f0 + fm) / (h * h);
    let curvature = if second > 1e-6 * f0 {
        Curvature::Minimum
    } else if second < -1e-6 * f0 {
        Curvature::Maximum
    } else {
        Curvature::Flat
    };
    Ok(StationaryAnalysis {
        weights,
        value: f0,
        first_derivative: first,
        second_derivative: second,
        curvature,
    })
}

/// One lattice point of [`sweep_simplex`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub weights: Vec<f64>,
    pub avg_err_vol: f64,
    pub avg_info: f64,
}

/// Compositions of `total` into `parts` positive integers, lexicographic.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Lattice `p = k/(grid-1)` with every `k_i ≥ 1`.
pub fn simplex_lattice(n: usize, grid: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    if grid < 2 || grid - 1 < n {
        return Err(Error::InvalidParameter(format!(
            "grid {grid} has no interior points for N = {n} (need grid ≥ N + 1)"
        )));
    }
    let denom = (grid - 1) as f64;
    Ok(compositions(grid - 1, n)
        .into_iter()
        .map(|k| k.into_iter().map(|ki| ki as f64 / denom).collect())
        .collect())
}

/// Closed-form `⟨ΔV^err⟩` and `⟨𝓘⟩` on the open-simplex lattice.
pub fn sweep_simplex(n: usize, delta_s: f64, grid: usize) -> Result<Vec<SweepRow>> {
    sweep_simplex_parallel(n, delta_s, grid, 1)
}

/// [`sweep_simplex`] with the lattice split into contiguous chunks.
pub fn sweep_simplex_parallel(n: usize, delta_s: f64, grid: usize, workers: usize) -> Result<Vec<SweepRow>> {
    if workers == 0 {
        return Err(Error::InvalidParameter("workers must be at least 1".into()));
    }
    let lattice = simplex_lattice(n, grid)?;
    let offset = avg_information_offset(n, delta_s)?;
    let row = |w: &Vec<f64>| -> Result<SweepRow> {
        let p = SimplexWeights::renormalized(w.clone());
        Ok(SweepRow {
            weights: w.clone(),
            avg_err_vol: error_objective(&p, delta_s)?,
            avg_info: avg_information_with_offset(&p, offset),
        })
    };
    let chunk = lattice.len().div_ceil(workers).max(1);
    let rows: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = lattice
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(row).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Numerical("worker panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(lattice.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stateavg::{avg_error_volume_closed, avg_information};
    use crate::states::{fourier_mub, RngSeed};
    use rand::Rng;

    fn w(p: &[f64]) -> SimplexWeights {
        SimplexWeights::new(p.to_vec()).unwrap()
    }

    fn random_interior(n: usize, rng: &mut impl Rng) -> SimplexWeights {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        SimplexWeights::renormalized(raw)
    }

    #[test]
    fn qubit_and_qutrit_examples() {
        let r = minimize_avg_error(2, 0.1, &w(&[0.9, 0.1]), 1e-10).unwrap();
        assert!(r.converged);
        assert!(r.weights.max_deviation_from_uniform() < 1e-8);
        let r = minimize_avg_error(3, 0.1, &w(&[0.7, 0.2, 0.1]), 1e-10).unwrap();
        assert!(r.converged && r.weights.max_deviation_from_uniform() < 1e-8);
        let r = maximize_avg_information(2, 0.1, &w(&[0.99, 0.01]), 1e-10).unwrap();
        assert!(r.converged && r.weights.max_deviation_from_uniform() < 1e-8);
    }

    #[test]
    fn converges_from_random_starts() {
        let mut rng = RngSeed::new(31, 0).rng();
        for n in [4, 6, 8] {
            for _ in 0..5 {
                let init = random_interior(n, &mut rng);
                let tol = 1e-9;
                let r = minimize_avg_error(n, 0.2, &init, tol).unwrap();
                assert!(r.converged, "N={n}: {r:?}");
                assert!(r.gradient_norm <= tol);
                assert!(r.weights.max_deviation_from_uniform() <= 10.0 * tol);
                let s = maximize_avg_information(n, 0.2, &init, tol).unwrap();
                let gap = r
                    .weights
                    .as_slice()
                    .iter()
                    .zip(s.weights.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(gap < 1e-8);
            }
        }
    }

    #[test]
    fn traces_are_monotone() {
        let init = w(&[0.6, 0.25, 0.1, 0.05]);
        let r = minimize_avg_error(4, 0.3, &init, 1e-9).unwrap();
        assert!(r.trace.windows(2).all(|t| t[1] <= t[0]));
        assert!(*r.trace.last().unwrap() >= 0.0);
        let floor = error_objective(&SimplexWeights::uniform(4).unwrap(), 0.3).unwrap();
        assert!((r.trace[0] - (error_objective(&init, 0.3).unwrap() / floor).ln()).abs() < 1e-12);
        let s = maximize_avg_information(4, 0.3, &init, 1e-9).unwrap();
        assert!(s.trace.windows(2).all(|t| t[1] >= t[0]));
    }

    #[test]
    fn objective_shares_closed_form() {
        let mut rng = RngSeed::new(2, 0).rng();
        for n in 2..=6 {
            let p = random_interior(n, &mut rng);
            let b = PostSelection::from_weights(&p).unwrap();
            assert_eq!(
                error_objective(b.weights(), 0.4).unwrap(),
                avg_error_volume_closed(n, &b, 0.4).unwrap()
            );
            let r = maximize_avg_information(n, 0.4, &p, 1e-9).unwrap();
            let at_uniform = avg_information(n, &fourier_mub(n, 0).unwrap(), 0.4).unwrap();
            assert!((r.objective - at_uniform).abs() < 1e-9);
        }
    }

    #[test]
    fn objective_blows_up_at_the_boundary() {
        for n in 2..=5 {
            let mut p = vec![(1.0 - 1e-6) / (n - 1) as f64; n];
            p[0] = 1e-6;
            let edge = error_objective(&SimplexWeights::renormalized(p), 1.0).unwrap();
            let centre = error_objective(&SimplexWeights::uniform(n).unwrap(), 1.0).unwrap();
            assert!(edge > 1e3 * centre);
        }
    }

    #[test]
    fn information_is_concave_around_uniform() {
        let offset = avg_information_offset(3, 0.1).unwrap();
        let top = avg_information_with_offset(&SimplexWeights::uniform(3).unwrap(), offset);
        for k in 1..30 {
            let eps = k as f64 * 0.01;
            let p = SimplexWeights::renormalized(vec![1.0 / 3.0 + eps, 1.0 / 3.0 - eps / 2.0, 1.0 / 3.0 - eps / 2.0]);
            assert!(top - avg_information_with_offset(&p, offset) >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            minimize_avg_error(2, 0.1, &w(&[1.0, 0.0]), 1e-9),
            Err(Error::InvalidInit)
        ));
        assert!(minimize_avg_error(3, 0.1, &w(&[0.5, 0.5]), 1e-9).is_err());
        assert!(minimize_avg_error(2, 0.1, &w(&[0.5, 0.5]), 0.0).is_err());
        assert!(minimize_avg_error(2, -1.0, &w(&[0.5, 0.5]), 1e-9).is_err());
    }

    #[test]
    fn stationary_point_examples() {
        let basis = PureState::from_complex(vec![1.0.into(), 0.0.into()]).unwrap();
        assert_eq!(fixed_state_stationary_qubit(&basis).unwrap().as_slice(), &[0.0, 1.0]);
        let h = 0.5f64.sqrt();
        let plus = PureState::from_complex(vec![h.into(), h.into()]).unwrap();
        let s = fixed_state_stationary_qubit(&plus).unwrap();
        assert!((s.as_slice()[0] - 0.5).abs() < 1e-15);
        let three = PureState::normalize(crate::linalg::CVector::new(vec![1.0.into(); 3]).unwrap()).unwrap();
        assert!(matches!(
            fixed_state_stationary_qubit(&three),
            Err(Error::Unsupported(_))
        ));
        assert!(analyze_fixed_state_qubit(&basis, 0.1).is_err());
    }

    #[test]
    fn skewed_state_has_a_stationary_minimum() {
        let psi = PureState::from_complex(vec![0.8f64.sqrt().into(), 0.2f64.sqrt().into()]).unwrap();
        let a = analyze_fixed_state_qubit(&psi, 0.1).unwrap();
        assert!((a.weights.as_slice()[0] - 0.2).abs() < 1e-12);
        assert!(a.first_derivative.abs() < 1e-6 * a.value.max(1.0));
        assert_eq!(a.curvature, Curvature::Minimum);
        // f(p) = 4 Δ^2... ∝ (√(0.8p) + √(0.2(1-p)))^4 / (p(1-p)); ratio of f(0.2) to f(0.5) is 2.56/3.24
        let at = |p: f64| fixed_state_error_volume(&psi, &w(&[p, 1.0 - p]), 0.1).unwrap();
        assert!((at(0.2) / at(0.5) - 2.56 / 3.24).abs() < 1e-12);
    }

    #[test]
    fn complex_state_stationary_point() {
        let psi = PureState::from_complex(vec![
            num_complex::Complex64::new(0.6, 0.0),
            num_complex::Complex64::from_polar(0.8, 0.7),
        ])
        .unwrap();
        let a = analyze_fixed_state_qubit(&psi, 0.2).unwrap();
        assert!(a.first_derivative.abs() < 1e-6 * a.value.max(1.0));
    }

    #[test]
    fn sweep_minimum_sits_nearest_uniform() {
        let rows = sweep_simplex(2, 0.1, 101).unwrap();
        assert_eq!(rows.len(), 99);
        let best = rows
            .iter()
            .min_by(|a, b| a.avg_err_vol.total_cmp(&b.avg_err_vol))
            .unwrap();
        assert!((best.weights[0] - 0.5).abs() < 1e-15);

        let rows = sweep_simplex_parallel(3, 0.1, 50, 4).unwrap();
        assert_eq!(rows, sweep_simplex(3, 0.1, 50).unwrap());
        let best = rows
            .iter()
            .min_by(|a, b| a.avg_err_vol.total_cmp(&b.avg_err_vol))
            .unwrap();
        let mut k: Vec<i64> = best.weights.iter().map(|p| (p * 49.0).round() as i64).collect();
        k.sort();
        assert_eq!(k, vec![16, 16, 17]);
        let top = rows.iter().max_by(|a, b| a.avg_info.total_cmp(&b.avg_info)).unwrap();
        assert_eq!(top.avg_err_vol, best.avg_err_vol);
        let dual: Vec<f64> = rows.iter().map(|r| r.avg_info + r.avg_err_vol.ln()).collect();
        assert!(dual.iter().all(|d| (d - dual[0]).abs() < 1e-9));
        assert!(sweep_simplex(4, 0.1, 3).is_err());
    }
}
