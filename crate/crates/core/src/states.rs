//! Pure states, post-selection states, density matrices, Fourier MUB vectors
//! and Haar-random sampling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inner, make_generator_basis, outer, CMatrix, CVector, GeneratorBasis, EXACT_TOL};

/// Pivot threshold used by [`phase_fix`].
pub const PHASE_PIVOT: f64 = 1e-9;

/// Wire format shared by pure states and post-selection states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudesJson {
    pub dim: usize,
    pub amps: Vec<[f64; 2]>,
}

impl AmplitudesJson {
    fn from_vector(v: &CVector) -> Self {
        Self {
            dim: v.dim(),
            amps: v.iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    fn into_vector(self) -> Result<CVector> {
        if self.amps.len() != self.dim {
            return Err(Error::DimensionMismatch(self.dim, self.amps.len()));
        }
        CVector::new(self.amps.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

fn check_normalized(v: &CVector) -> Result<()> {
    let n2 = v.norm_sqr();
    if (n2 - 1.0).abs() > EXACT_TOL {
        return Err(Error::NotNormalized(n2));
    }
    Ok(())
}

/// Normalized pure state; physically meaningful only up to a global phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AmplitudesJson", into = "AmplitudesJson")]
pub struct PureState {
    amps: CVector,
}

impl PureState {
    pub fn new(amps: CVector) -> Result<Self> {
        check_normalized(&amps)?;
        Ok(Self { amps })
    }

    /// Rescales a nonzero vector to unit norm.
    pub fn normalize(amps: CVector) -> Result<Self> {
        let n2 = amps.norm_sqr();
        if n2 == 0.0 || !n2.is_finite() {
            return Err(Error::DegenerateInput("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amps: amps.scaled(Complex64::new(1.0 / n2.sqrt(), 0.0)),
        })
    }

    pub fn from_complex(entries: Vec<Complex64>) -> Result<Self> {
        Self::new(CVector::new(entries)?)
    }

    pub fn dim(&self) -> usize {
        self.amps.dim()
    }

    pub fn amps(&self) -> &CVector {
        &self.amps
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.amps.as_slice()
    }

    pub fn with_phase(&self, theta: f64) -> Self {
        Self {
            amps: self.amps.scaled(Complex64::from_polar(1.0, theta)),
        }
    }
}

impl TryFrom<AmplitudesJson> for PureState {
    type Error = Error;

    fn try_from(j: AmplitudesJson) -> Result<Self> {
        Self::new(j.into_vector()?)
    }
}

impl From<PureState> for AmplitudesJson {
    fn from(s: PureState) -> Self {
        AmplitudesJson::from_vector(&s.amps)
    }
}

/// Probability vector on the closed simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights {
    p: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidDimension(p.len()));
        }
        if let Some(i) = p.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights(format!("entry {i} is {}", p[i])));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > EXACT_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        Ok(Self {
            p: vec![1.0 / n as f64; n],
        })
    }

    /// Divides by the sum; used after multiplicative updates.
    pub(crate) fn renormalized(p: Vec<f64>) -> Self {
        let sum: f64 = p.iter().sum();
        Self {
            p: p.into_iter().map(|x| x / sum).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn is_interior(&self) -> bool {
        self.p.iter().all(|&x| x > 0.0)
    }

    pub fn max_deviation_from_uniform(&self) -> f64 {
        let u = 1.0 / self.p.len() as f64;
        self.p.iter().map(|x| (x - u).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.p
    }
}

/// Post-selection state `|b>`. Every amplitude must be nonzero because the
/// weak coordinates divide by `b_i`.
///
/// The stored amplitudes are the expansion coefficients of `|b>`; the
/// overlaps `<b|i>` entering the weak values are their conjugates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AmplitudesJson", into = "AmplitudesJson")]
pub struct PostSelection {
    amps: CVector,
    weights: SimplexWeights,
}

impl PostSelection {
    pub fn new(amps: CVector) -> Result<Self> {
        check_normalized(&amps)?;
        for (index, z) in amps.iter().enumerate() {
            if z.norm() <= EXACT_TOL {
                return Err(Error::ZeroComponent {
                    index,
                    modulus: z.norm(),
                });
            }
        }
        let weights = SimplexWeights {
            p: amps.iter().map(|z| z.norm_sqr()).collect(),
        };
        Ok(Self { amps, weights })
    }

    pub fn from_complex(entries: Vec<Complex64>) -> Result<Self> {
        Self::new(CVector::new(entries)?)
    }

    /// Real nonnegative amplitudes `sqrt(p_i)`.
    pub fn from_weights(w: &SimplexWeights) -> Result<Self> {
        Self::from_complex(w.p.iter().map(|&x| Complex64::new(x.sqrt(), 0.0)).collect())
    }

    /// Amplitudes `sqrt(p_i) e^{i θ_i}`.
    pub fn from_weights_and_phases(w: &SimplexWeights, phases: &[f64]) -> Result<Self> {
        if phases.len() != w.dim() {
            return Err(Error::DimensionMismatch(w.dim(), phases.len()));
        }
        Self::from_complex(
            w.p.iter()
                .zip(phases)
                .map(|(&x, &t)| Complex64::from_polar(x.sqrt(), t))
                .collect(),
        )
    }

    pub fn from_state(psi: &PureState) -> Result<Self> {
        Self::new(psi.amps.clone())
    }

    pub fn dim(&self) -> usize {
        self.amps.dim()
    }

    pub fn amps(&self) -> &CVector {
        &self.amps
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    /// `<b|i>` for every basis index.
    pub fn overlaps(&self) -> Vec<Complex64> {
        self.amps.iter().map(|z| z.conj()).collect()
    }

    pub fn as_state(&self) -> PureState {
        PureState {
            amps: self.amps.clone(),
        }
    }
}

impl TryFrom<AmplitudesJson> for PostSelection {
    type Error = Error;

    fn try_from(j: AmplitudesJson) -> Result<Self> {
        Self::new(j.into_vector()?)
    }
}

impl From<PostSelection> for AmplitudesJson {
    fn from(b: PostSelection) -> Self {
        AmplitudesJson::from_vector(&b.amps)
    }
}

/// `ρ = |ψ><ψ|` together with its generator coordinates `<T_i> = Tr(ρ Λ_i)/2`.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub mat: CMatrix,
    pub bloch: Vec<f64>,
}

impl DensityMatrix {
    /// `I/N + Σ <T_i> Λ_i`.
    pub fn reconstruct(&self, basis: &GeneratorBasis) -> DMatrix<Complex64> {
        basis.expand(&self.bloch)
    }

    pub fn purity(&self) -> f64 {
        self.mat.trace_product(&self.mat).re
    }
}

pub fn density_from_state(psi: &PureState) -> DensityMatrix {
    let basis = make_generator_basis(psi.dim()).expect("pure state dimension is at least 2");
    density_from_state_with(psi, &basis)
}

pub fn density_from_state_with(psi: &PureState, basis: &GeneratorBasis) -> DensityMatrix {
    let mat = outer(&psi.amps, &psi.amps).expect("same vector");
    let bloch = basis.expectations(mat.entries());
    DensityMatrix { mat, bloch }
}

/// `b_j = exp(2πi jk/N)/sqrt(N)`: the `k`-th Fourier vector, unbiased with
/// respect to the computational basis.
pub fn fourier_mub(n: usize, k: usize) -> Result<PostSelection> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, bound: n });
    }
    let s = 1.0 / (n as f64).sqrt();
    let amps = (0..n)
        .map(|j| Complex64::from_polar(s, 2.0 * PI * ((j * k) % n) as f64 / n as f64))
        .collect();
    PostSelection::from_complex(amps)
}

/// True iff every `|b_i|^2` is within `tol` of `1/N`.
pub fn is_unbiased(b: &PostSelection, tol: f64) -> bool {
    b.weights().max_deviation_from_uniform() <= tol
}

/// Seed and stream for a reproducible ChaCha20 generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Same seed on the stream offset by `k`; used to give parallel workers
    /// independent sequences.
    pub fn substream(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            stream: self.stream.wrapping_add(k),
        }
    }
}

/// Draws a state from the unitarily invariant measure by normalizing a
/// standard complex Gaussian vector.
pub fn sample_haar_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PureState> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    loop {
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if n2 > 0.0 {
            let s = 1.0 / n2.sqrt();
            return PureState::from_complex(v.into_iter().map(|z| z * s).collect());
        }
    }
}

/// Multiplies by the unit phase that makes the first amplitude with modulus
/// above [`PHASE_PIVOT`] real and positive.
pub fn phase_fix(psi: &PureState) -> PureState {
    let Some(i) = psi.amps.iter().position(|z| z.norm() > PHASE_PIVOT) else {
        return psi.clone();
    };
    let pivot = psi.amps[i];
    let phase = pivot.conj() / pivot.norm();
    let mut v: Vec<Complex64> = psi.as_slice().iter().map(|z| z * phase).collect();
    // exactly real pivot keeps the map idempotent
    v[i] = Complex64::new(pivot.norm(), 0.0);
    PureState {
        amps: CVector::new(v).expect("finite amplitudes"),
    }
}

/// `sqrt(1 - |<ψ1|ψ2>|^2)`, evaluated as the norm of the part of `ψ2`
/// orthogonal to `ψ1` so that tiny distances keep full relative precision.
pub fn state_distance(a: &PureState, b: &PureState) -> Result<f64> {
    let ov = inner(&a.amps, &b.amps)?;
    let resid: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (y - ov * x).norm_sqr())
        .sum();
    Ok(resid.sqrt().min(1.0))
}
