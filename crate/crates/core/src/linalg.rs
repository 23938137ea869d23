//! Small dense complex vectors and matrices, plus the generalized Gell-Mann
//! generators of SU(N).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Absolute tolerance for exact linear-algebra identities.
pub const EXACT_TOL: f64 = 1e-12;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

/// Column of complex amplitudes, length at least 2.
#[derive(Clone, Debug, PartialEq)]
pub struct CVector(DVector<Complex64>);

impl CVector {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::InvalidDimension(entries.len()));
        }
        if let Some(i) = entries.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(DVector::from_vec(entries)))
    }

    /// Builds a vector from real parts only.
    pub fn from_reals(entries: &[f64]) -> Result<Self> {
        Self::new(entries.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        self.0.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self(self.0.map(|z| z * factor))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.0.iter()
    }
}

impl std::ops::Index<usize> for CVector {
    type Output = Complex64;

    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Square complex matrix with a cached Hermiticity flag.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    entries: DMatrix<Complex64>,
    hermitian: bool,
}

impl CMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(entries.nrows(), entries.ncols()));
        }
        let hermitian = hermitian_deviation(&entries) <= EXACT_TOL;
        Ok(Self { entries, hermitian })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &CMatrix) -> Complex64 {
        trace_product(&self.entries, &other.entries)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        (&self.entries - &other.entries)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, ij: (usize, usize)) -> &Complex64 {
        &self.entries[ij]
    }
}

pub(crate) fn trace_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for j in 0..n {
        for k in 0..n {
            acc += a[(j, k)] * b[(k, j)];
        }
    }
    acc
}

pub(crate) fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for j in 0..n {
        for k in 0..n {
            dev = dev.max((m[(j, k)] - m[(k, j)].conj()).norm());
        }
    }
    dev
}

/// `<a|b>`, conjugate-linear in `a`.
pub fn inner(a: &CVector, b: &CVector) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(a.0.dotc(&b.0))
}

/// `|a><b|`, entries `a_j conj(b_k)`.
pub fn outer(a: &CVector, b: &CVector) -> Result<CMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    CMatrix::new(&a.0 * b.0.adjoint())
}

/// Traceless Hermitian generators of SU(N) normalized to `Tr(Λ_i Λ_j) = 2δ_ij`.
///
/// Ordering: symmetric off-diagonal matrices for pairs `(j, k)`, `j < k`, in
/// lexicographic order; then the antisymmetric ones in the same pair order;
/// then the `N - 1` diagonal ones. For `N = 2` this is `(σ_x, σ_y, σ_z)`.
#[derive(Clone, Debug)]
pub struct GeneratorBasis {
    dim: usize,
    generators: Vec<CMatrix>,
}

impl GeneratorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[CMatrix] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Index of the symmetric generator for the pair `(j, k)`, `j < k`.
    pub fn symmetric_index(&self, j: usize, k: usize) -> usize {
        pair_index(self.dim, j, k)
    }

    /// Index of the antisymmetric generator for the pair `(j, k)`, `j < k`.
    pub fn antisymmetric_index(&self, j: usize, k: usize) -> usize {
        self.pairs() + pair_index(self.dim, j, k)
    }

    /// Index of the `l`-th diagonal generator, `l` in `1..N`.
    pub fn diagonal_index(&self, l: usize) -> usize {
        2 * self.pairs() + l - 1
    }

    fn pairs(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    /// Real expectation values `Tr(ρ Λ_i) / 2` of a Hermitian matrix.
    pub fn expectations(&self, rho: &DMatrix<Complex64>) -> Vec<f64> {
        self.generators
            .iter()
            .map(|g| 0.5 * trace_product(rho, &g.entries).re)
            .collect()
    }

    /// `I/N + Σ t_i Λ_i`.
    pub fn expand(&self, coeffs: &[f64]) -> DMatrix<Complex64> {
        let n = self.dim;
        let mut m = DMatrix::<Complex64>::identity(n, n) / Complex64::new(n as f64, 0.0);
        for (c, g) in coeffs.iter().zip(&self.generators) {
            m += g.entries.map(|z| z * *c);
        }
        m
    }
}

fn pair_index(n: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < n);
    // pairs with first index < j, then offset within row j
    j * (2 * n - j - 1) / 2 + (k - j - 1)
}

pub fn make_generator_basis(n: usize) -> Result<GeneratorBasis> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    let mut generators = Vec::with_capacity(n * n - 1);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
    for &(j, k) in &pairs {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        m[(j, k)] = ONE;
        m[(k, j)] = ONE;
        generators.push(CMatrix {
            entries: m,
            hermitian: true,
        });
    }
    for &(j, k) in &pairs {
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        m[(j, k)] = -I;
        m[(k, j)] = I;
        generators.push(CMatrix {
            entries: m,
            hermitian: true,
        });
    }
    for l in 1..n {
        let scale = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for d in 0..l {
            m[(d, d)] = Complex64::new(scale, 0.0);
        }
        m[(l, l)] = Complex64::new(-(l as f64) * scale, 0.0);
        generators.push(CMatrix {
            entries: m,
            hermitian: true,
        });
    }
    Ok(GeneratorBasis { dim: n, generators })
}
