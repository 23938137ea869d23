//! Weak values of the eigenprojectors, their inversion back to the state, the
//! single-projector scheme and a Gaussian-pointer measurement simulator.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, CVector, EXACT_TOL};
use crate::states::{phase_fix, PostSelection, PureState};

/// Smallest `|<b|ψ>|` for which weak values are computed.
pub const SINGULAR_OVERLAP: f64 = 1e-12;

/// Largest tolerated `|Σ w_i - 1|` on input to [`reconstruct_state`].
pub const WEAK_SUM_TOL: f64 = 1e-6;

/// Wire format of a weak-value vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeakValuesJson {
    pub dim: usize,
    pub w: Vec<[f64; 2]>,
}

/// The `N` weak values of the eigenprojectors; they sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeakValuesJson", into = "WeakValuesJson")]
pub struct WeakValueVector {
    w: Vec<Complex64>,
}

impl WeakValueVector {
    /// Wraps raw values; the sum rule is checked where it matters
    /// (see [`WeakValueVector::constraint_residual`]).
    pub fn new(w: Vec<Complex64>) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::InvalidDimension(w.len()));
        }
        if let Some(i) = w.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { w })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.w
    }

    pub fn sum(&self) -> Complex64 {
        self.w.iter().sum()
    }

    /// `|Σ w_i - 1|`.
    pub fn constraint_residual(&self) -> f64 {
        (self.sum() - Complex64::new(1.0, 0.0)).norm()
    }

    pub fn coordinates(&self) -> WeakCoordinates {
        WeakCoordinates {
            free: self.w[..self.w.len() - 1].to_vec(),
        }
    }
}

impl TryFrom<WeakValuesJson> for WeakValueVector {
    type Error = Error;

    fn try_from(j: WeakValuesJson) -> Result<Self> {
        if j.w.len() != j.dim {
            return Err(Error::DimensionMismatch(j.dim, j.w.len()));
        }
        Self::new(j.w.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

impl From<WeakValueVector> for WeakValuesJson {
    fn from(v: WeakValueVector) -> Self {
        Self {
            dim: v.dim(),
            w: v.w.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

/// Chart coordinates `(w_1, …, w_{N-1})`; `w_N = 1 - Σ free` is implied.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakCoordinates {
    free: Vec<Complex64>,
}

impl WeakCoordinates {
    pub fn new(free: Vec<Complex64>) -> Result<Self> {
        if free.is_empty() {
            return Err(Error::InvalidDimension(free.len() + 1));
        }
        if let Some(i) = free.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { free })
    }

    /// From real coordinates interleaved as `(x_1, y_1, x_2, y_2, …)`.
    pub fn from_real(xy: &[f64]) -> Result<Self> {
        if !xy.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter("odd number of real coordinates".into()));
        }
        Self::new(xy.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    pub fn dim(&self) -> usize {
        self.free.len() + 1
    }

    pub fn free(&self) -> &[Complex64] {
        &self.free
    }

    pub fn derived(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) - self.free.iter().sum::<Complex64>()
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.free.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn to_vector(&self) -> WeakValueVector {
        let mut w = self.free.clone();
        w.push(self.derived());
        WeakValueVector { w }
    }
}

/// Gaussian pointer of width `delta` read out over an ensemble of `ensemble`
/// runs per quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointerModel {
    pub delta: f64,
    pub ensemble: u64,
}

impl PointerModel {
    pub fn new(delta: f64, ensemble: u64) -> Result<Self> {
        let pm = Self { delta, ensemble };
        pm.validate()?;
        Ok(pm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pointer width must be positive, got {}",
                self.delta
            )));
        }
        if self.ensemble == 0 {
            return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
        }
        Ok(())
    }

    /// Statistical error `Δ/sqrt(M)`.
    pub fn delta_s(&self) -> f64 {
        self.delta / (self.ensemble as f64).sqrt()
    }
}

/// `w_i = <b|i><i|ψ> / <b|ψ>`.
pub fn weak_values(psi: &PureState, b: &PostSelection) -> Result<WeakValueVector> {
    if psi.dim() != b.dim() {
        return Err(Error::DimensionMismatch(psi.dim(), b.dim()));
    }
    let numerators: Vec<Complex64> = b
        .overlaps()
        .iter()
        .zip(psi.as_slice())
        .map(|(bi, ai)| bi * ai)
        .collect();
    let overlap: Complex64 = numerators.iter().sum();
    if overlap.norm() <= SINGULAR_OVERLAP {
        return Err(Error::SingularPostSelection(overlap.norm()));
    }
    Ok(WeakValueVector {
        w: numerators.into_iter().map(|z| z / overlap).collect(),
    })
}

/// Inverts [`weak_values`]: `α_i ∝ w_i / <b|i>`, normalized and phase fixed.
pub fn reconstruct_state(w: &WeakValueVector, b: &PostSelection) -> Result<PureState> {
    if w.dim() != b.dim() {
        return Err(Error::DimensionMismatch(w.dim(), b.dim()));
    }
    if w.w.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Err(Error::DegenerateInput("all weak values vanish".into()));
    }
    let resid = w.constraint_residual();
    if resid > WEAK_SUM_TOL {
        return Err(Error::InconsistentWeakValues(resid));
    }
    let z: Vec<Complex64> = w.w.iter().zip(b.overlaps()).map(|(wi, bi)| wi / bi).collect();
    let psi = PureState::normalize(CVector::new(z)?)?;
    Ok(phase_fix(&psi))
}

/// Data of the single-projector scheme: weak values `W_j` of `|φ><φ|` for
/// every post-selection `|b_j>` of an orthonormal basis.
#[derive(Clone, Debug)]
pub struct SingleProjectorData {
    pub phi: PureState,
    pub basis: Vec<CVector>,
    pub big_w: Vec<Complex64>,
}

fn check_orthonormal(basis: &[CVector], n: usize) -> Result<()> {
    if basis.len() != n {
        return Err(Error::DimensionMismatch(n, basis.len()));
    }
    let mut dev = 0.0_f64;
    for (j, a) in basis.iter().enumerate() {
        for (k, b) in basis.iter().enumerate() {
            let g = inner(a, b)?;
            let target = if j == k { 1.0 } else { 0.0 };
            dev = dev.max((g - Complex64::new(target, 0.0)).norm());
        }
    }
    if dev > EXACT_TOL {
        return Err(Error::NotOrthonormal(dev));
    }
    Ok(())
}

/// `W_j = <b_j|φ><φ|ψ> / <b_j|ψ>`. Unlike the eigenprojector weak values these
/// do not sum to one.
pub fn single_projector_weak_values(
    psi: &PureState,
    phi: &PureState,
    basis: &[CVector],
) -> Result<SingleProjectorData> {
    let n = psi.dim();
    if phi.dim() != n {
        return Err(Error::DimensionMismatch(n, phi.dim()));
    }
    check_orthonormal(basis, n)?;
    let phi_psi = inner(phi.amps(), psi.amps())?;
    let mut big_w = Vec::with_capacity(n);
    for (j, bj) in basis.iter().enumerate() {
        let bj_psi = inner(bj, psi.amps())?;
        let bj_phi = inner(bj, phi.amps())?;
        if bj_psi.norm() <= SINGULAR_OVERLAP || bj_phi.norm() <= SINGULAR_OVERLAP {
            return Err(Error::SingularConfiguration(format!(
                "basis vector {j} is orthogonal to psi or phi"
            )));
        }
        big_w.push(bj_phi * phi_psi / bj_psi);
    }
    Ok(SingleProjectorData {
        phi: phi.clone(),
        basis: basis.to_vec(),
        big_w,
    })
}

/// `w̃_j = |<φ|b_j>|^2 / W_j`, the weak values of `|b_j><b_j|` with `|φ>`
/// as the post-selection.
pub fn convert_single_projector(d: &SingleProjectorData) -> Result<WeakValueVector> {
    let mut w = Vec::with_capacity(d.big_w.len());
    for (index, (bj, wj)) in d.basis.iter().zip(&d.big_w).enumerate() {
        if wj.norm() == 0.0 {
            return Err(Error::DivisionByZero { index });
        }
        let phi_bj = inner(d.phi.amps(), bj)?;
        w.push(phi_bj.norm_sqr() / wj);
    }
    WeakValueVector::new(w)
}

/// Recovers `ψ` from the converted values: in the basis `{b_j}` they are
/// ordinary weak values with post-selection components `<b_j|φ>`.
pub fn reconstruct_single_projector(w: &WeakValueVector, phi: &PureState, basis: &[CVector]) -> Result<PureState> {
    let n = phi.dim();
    check_orthonormal(basis, n)?;
    let phi_in_basis: Vec<Complex64> = basis.iter().map(|bj| inner(bj, phi.amps())).collect::<Result<_>>()?;
    let post = PostSelection::from_complex(phi_in_basis)?;
    let beta = reconstruct_state(w, &post)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); n];
    for (coef, bj) in beta.as_slice().iter().zip(basis) {
        for (a, e) in amps.iter_mut().zip(bj.iter()) {
            *a += coef * e;
        }
    }
    Ok(phase_fix(&PureState::normalize(CVector::new(amps)?)?))
}

/// Weak values read out with Gaussian noise, plus the per-quadrature standard
/// error that produced them.
#[derive(Clone, Debug)]
pub struct NoisyWeakValues {
    pub w: WeakValueVector,
    pub stderr: f64,
}

/// Perturbs `Re w_i` and `Im w_i` of the free components independently by
/// `N(0, Δ_s^2)` and restores `w_N = 1 - Σ free`.
pub fn simulate_weak_measurement<R: Rng + ?Sized>(
    psi: &PureState,
    b: &PostSelection,
    pm: &PointerModel,
    rng: &mut R,
) -> Result<NoisyWeakValues> {
    pm.validate()?;
    let exact = weak_values(psi, b)?;
    let sd = pm.delta_s();
    let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let free = exact
        .coordinates()
        .free
        .into_iter()
        .map(|z| Complex64::new(z.re + noise.sample(rng), z.im + noise.sample(rng)))
        .collect();
    Ok(NoisyWeakValues {
        w: WeakCoordinates { free }.to_vector(),
        stderr: sd,
    })
}
