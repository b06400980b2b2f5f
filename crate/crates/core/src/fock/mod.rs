//! Truncated number-basis operator algebra.
//!
//! Quadratures follow the `hbar = 1/2` convention: `X = (a† + a)/2`,
//! `P = i(a† − a)/2`, so `[X, P] = i/2` and `X² + P² = N + 1/2`.
//!
//! Polynomials in the truncated quadratures are only faithful away from the
//! top of the basis, so operator identities are checked on an *interior
//! block* `|0⟩ … |k⟩` with `k = dim − margin`.

pub mod two_mode;

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Relative hermiticity tolerance, `max|A − A†| ≤ tol · max|A|`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;
/// Eigenvalues of a unitary closer than this to `−1` make the principal
/// logarithm ill defined.
pub const BRANCH_TOLERANCE: f64 = 1e-9;
/// Default tail-mass tolerance for trusted Fock states.
pub const TAIL_TOLERANCE: f64 = 1e-8;

/// Default number of top basis states excluded from interior checks.
pub fn default_margin(dim: usize) -> usize {
    dim / 4
}

/// Highest basis index of the interior block, `k = dim − margin`, clamped
/// to the basis.
pub fn interior_top(dim: usize, margin: usize) -> usize {
    dim.saturating_sub(margin).min(dim.saturating_sub(1))
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Dense operator on the truncated number basis `|0⟩ … |dim−1⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct FockOperator {
    mat: CMatrix,
}

impl FockOperator {
    pub fn from_matrix(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(invalid(format!(
                "operator must be square and non-empty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("operator has non-finite entries"));
        }
        Ok(Self { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: CMatrix) -> Self {
        debug_assert_eq!(mat.nrows(), mat.ncols());
        Self { mat }
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: CMatrix::identity(dim, dim) }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { mat: CMatrix::zeros(dim, dim) }
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self { mat: CMatrix::from_diagonal(&CVector::from_column_slice(values)) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        Self { mat: self.mat.adjoint() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { mat: &self.mat * s }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::identity(self.dim());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Self {
        Self { mat: &self.mat * &other.mat - &other.mat * &self.mat }
    }

    /// `max|A − A†| / max|A|` (zero for the zero operator).
    pub fn hermitian_defect(&self) -> f64 {
        let scale = max_abs(&self.mat);
        if scale == 0.0 {
            return 0.0;
        }
        max_abs(&(&self.mat - self.mat.adjoint())) / scale
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian_defect() <= HERMITIAN_TOLERANCE
    }

    /// Square block over `|0⟩ … |k⟩`.
    pub fn interior_block(&self, k: usize) -> CMatrix {
        let n = (k + 1).min(self.dim());
        self.mat.view((0, 0), (n, n)).into_owned()
    }

    /// Columns `|0⟩ … |k⟩`, i.e. `M Π_k`.
    pub fn interior_columns(&self, k: usize) -> CMatrix {
        let n = (k + 1).min(self.dim());
        self.mat.columns(0, n).into_owned()
    }

    /// `‖(U†U − I) Π_k‖`.
    pub fn interior_unitarity_defect(&self, k: usize) -> f64 {
        let gram = self.mat.adjoint() * &self.mat - CMatrix::identity(self.dim(), self.dim());
        let n = (k + 1).min(self.dim());
        spectral_norm(&gram.columns(0, n).into_owned())
    }

    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        if state.dim() != self.dim() {
            return Err(invalid(format!(
                "operator dimension {} does not match state dimension {}",
                self.dim(),
                state.dim()
            )));
        }
        Ok(FockState { coeffs: &self.mat * &state.coeffs })
    }
}

impl Mul for &FockOperator {
    type Output = FockOperator;
    fn mul(self, rhs: &FockOperator) -> FockOperator {
        FockOperator { mat: &self.mat * &rhs.mat }
    }
}

impl Add for &FockOperator {
    type Output = FockOperator;
    fn add(self, rhs: &FockOperator) -> FockOperator {
        FockOperator { mat: &self.mat + &rhs.mat }
    }
}

impl Sub for &FockOperator {
    type Output = FockOperator;
    fn sub(self, rhs: &FockOperator) -> FockOperator {
        FockOperator { mat: &self.mat - &rhs.mat }
    }
}

/// Common surface of the two state representations.
pub trait StateVector {
    fn inner(&self, other: &Self) -> Result<C64>;

    fn norm(&self) -> f64 {
        self.inner_self().sqrt()
    }

    fn inner_self(&self) -> f64;
}

/// `ε = 1 − |⟨a|b⟩|` for two normalized states in the same representation.
pub fn fidelity_error<S: StateVector>(a: &S, b: &S) -> Result<f64> {
    for (label, s) in [("first", a), ("second", b)] {
        let n = s.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("{label} state is not normalized (norm {n})")));
        }
    }
    let overlap = a.inner(b)?.norm();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Single-mode state as number-basis amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    coeffs: CVector,
}

impl FockState {
    pub fn from_coeffs(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("state needs at least one amplitude"));
        }
        if coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("state has non-finite amplitudes"));
        }
        Ok(Self { coeffs: CVector::from_vec(coeffs) })
    }

    /// Number state `|n⟩`.
    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        if n >= dim {
            return Err(invalid(format!("|{n}⟩ does not fit in dimension {dim}")));
        }
        let mut coeffs = CVector::zeros(dim);
        coeffs[n] = C64::new(1.0, 0.0);
        Ok(Self { coeffs })
    }

    /// Coherent state `|α⟩`, renormalized after truncation. Its position
    /// wavefunction is `(2/π)^{1/4} exp(−(x − α)²)` for real `α`.
    pub fn coherent(alpha: C64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let mut coeffs = CVector::zeros(dim);
        coeffs[0] = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 1..dim {
            coeffs[n] = coeffs[n - 1] * alpha / (n as f64).sqrt();
        }
        let mut s = Self { coeffs };
        s.normalize()?;
        Ok(s)
    }

    /// Normalized superposition with the given leading amplitudes.
    pub fn superposition(amplitudes: &[C64], dim: usize) -> Result<Self> {
        if amplitudes.len() > dim {
            return Err(invalid(format!(
                "{} amplitudes do not fit in dimension {dim}",
                amplitudes.len()
            )));
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); dim];
        coeffs[..amplitudes.len()].copy_from_slice(amplitudes);
        let mut s = Self::from_coeffs(coeffs)?;
        s.normalize()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &CVector {
        &self.coeffs
    }

    pub fn coeff(&self, n: usize) -> C64 {
        self.coeffs.get(n).copied().unwrap_or_default()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.coeffs.norm();
        if n == 0.0 {
            return Err(Error::NumericalFailure("cannot normalize the zero state".into()));
        }
        self.coeffs.unscale_mut(n);
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `Σ_{n ≥ dim − margin} |c_n|²`.
    pub fn tail_mass(&self, margin: usize) -> f64 {
        let start = self.dim().saturating_sub(margin);
        self.coeffs.iter().skip(start).map(|z| z.norm_sqr()).sum()
    }

    /// Copy with every amplitude at index `≥ terms` zeroed (no renormalization).
    pub fn truncated(&self, terms: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        for z in coeffs.iter_mut().skip(terms) {
            *z = C64::new(0.0, 0.0);
        }
        Self { coeffs }
    }
}

impl StateVector for FockState {
    fn inner(&self, other: &Self) -> Result<C64> {
        if self.dim() != other.dim() {
            return Err(invalid(format!(
                "state dimensions differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.coeffs.dotc(&other.coeffs))
    }

    fn inner_self(&self) -> f64 {
        self.coeffs.norm_squared()
    }
}

/// Ladder and quadrature operators on one truncated mode.
#[derive(Clone, Debug)]
pub struct Quadratures {
    pub a: FockOperator,
    pub adag: FockOperator,
    pub x: FockOperator,
    pub p: FockOperator,
    pub n: FockOperator,
}

pub fn quadrature_operators(dim: usize) -> Result<Quadratures> {
    if dim < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {dim}")));
    }
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    let x = (&adag + &a) * C64::new(0.5, 0.0);
    let p = (&adag - &a) * C64::new(0.0, 0.5);
    let n = &adag * &a;
    Ok(Quadratures {
        a: FockOperator::from_matrix_unchecked(a),
        adag: FockOperator::from_matrix_unchecked(adag),
        x: FockOperator::from_matrix_unchecked(x),
        p: FockOperator::from_matrix_unchecked(p),
        n: FockOperator::from_matrix_unchecked(n),
    })
}

/// Eigendecomposition of a hermitian operator (symmetrized first).
pub(crate) fn hermitian_eigen(h: &FockOperator) -> Result<(Vec<f64>, CMatrix)> {
    if !h.is_hermitian() {
        return Err(invalid(format!(
            "generator is not hermitian (relative defect {:.3e})",
            h.hermitian_defect()
        )));
    }
    let sym = (h.matrix() + h.matrix().adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("hermitian eigensolver did not converge".into()))?;
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// `V diag(f(λ)) V†`.
pub(crate) fn spectral_map(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> C64) -> CMatrix {
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let w = f(lambda);
        for z in scaled.column_mut(j).iter_mut() {
            *z *= w;
        }
    }
    scaled * vectors.adjoint()
}

/// `exp(i t H)` for hermitian `H`.
pub fn unitary_from_generator(h: &FockOperator, t: f64) -> Result<FockOperator> {
    if !t.is_finite() {
        return Err(invalid("amplitude must be finite"));
    }
    if t == 0.0 {
        return Ok(FockOperator::identity(h.dim()));
    }
    let (values, vectors) = hermitian_eigen(h)?;
    Ok(FockOperator::from_matrix_unchecked(spectral_map(&values, &vectors, |l| {
        C64::from_polar(1.0, t * l)
    })))
}

/// Schur sweeps allowed per basis state before falling back.
const SCHUR_SWEEPS_PER_DIM: usize = 30;

/// Eigenvectors (columns) and eigenvalues of a unitary from its Schur form.
/// `None` when the QR iteration stalls, which happens for near-scalar input.
fn schur_eigen(u: &FockOperator) -> Result<Option<(CMatrix, Vec<C64>)>> {
    let dim = u.dim();
    let Some(schur) = Schur::try_new(u.matrix().clone(), f64::EPSILON, SCHUR_SWEEPS_PER_DIM * dim.max(1)) else {
        return Ok(None);
    };
    let (q, t) = schur.unpack();
    let mut off = 0.0f64;
    for j in 0..dim {
        for i in 0..j {
            off = off.max(t[(i, j)].norm());
        }
    }
    if off > 1e-8 {
        return Err(Error::NumericalFailure(format!(
            "input is not normal (Schur off-diagonal {off:.3e})"
        )));
    }
    Ok(Some((q, (0..dim).map(|j| t[(j, j)]).collect())))
}

/// Eigenbasis of a unitary from the hermitian matrix `Im(e^{−iθ} U)`, with
/// `θ` the phase of the trace so that the spectrum sits near phase zero.
fn hermitian_part_eigen(u: &FockOperator) -> Result<(CMatrix, Vec<C64>)> {
    let m = u.matrix();
    let trace = m.trace();
    let rotation = if trace.norm() > 0.0 { trace.conj() / trace.norm() } else { C64::new(1.0, 0.0) };
    let v = m * rotation;
    let im = (&v - v.adjoint()) * C64::new(0.0, -0.5);
    let eig = SymmetricEigen::try_new(im, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("hermitian eigensolver did not converge".into()))?;
    let vectors = eig.eigenvectors;
    let mut values = Vec::with_capacity(u.dim());
    let mut defect = 0.0f64;
    for j in 0..u.dim() {
        let col = vectors.column(j);
        let image = m * col;
        let lambda = col.dotc(&image);
        defect = defect.max((image - col * lambda).norm());
        values.push(lambda);
    }
    if defect > 1e-8 {
        return Err(Error::NumericalFailure(format!("input is not normal (eigenvector defect {defect:.3e})")));
    }
    Ok((vectors, values))
}

/// Principal logarithm of a unitary, computed from its (diagonal) Schur
/// form. The result is anti-hermitian.
pub fn unitary_log(u: &FockOperator) -> Result<FockOperator> {
    let (q, eigenvalues) = match schur_eigen(u)? {
        Some(e) => e,
        None => hermitian_part_eigen(u)?,
    };
    let mut logs = Vec::with_capacity(eigenvalues.len());
    for lambda in eigenvalues {
        let distance = (lambda + 1.0).norm();
        if distance < BRANCH_TOLERANCE {
            return Err(Error::BranchAmbiguity { distance });
        }
        logs.push(lambda.ln());
    }
    let mut scaled = q.clone();
    for (j, l) in logs.iter().enumerate() {
        for z in scaled.column_mut(j).iter_mut() {
            *z *= *l;
        }
    }
    Ok(FockOperator::from_matrix_unchecked(scaled * q.adjoint()))
}

/// Kerr generator `G = i t (X⁴ + P⁴) + (4/9) t [X³, P³]`.
///
/// On the interior block `i(X²P² + P²X²) − (4/9)[X³, P³]` is a multiple of
/// the identity, so `exp(G)` agrees with `exp(i t (N + 1/2)²)` up to a
/// global phase.
pub fn kerr_generator(t: f64, dim: usize) -> Result<FockOperator> {
    let q = quadrature_operators(dim)?;
    let x3 = q.x.pow(3);
    let p3 = q.p.pow(3);
    let quartic = &q.x.pow(4) + &q.p.pow(4);
    let g = &quartic.scale(C64::new(0.0, t)) + &x3.commutator(&p3).scale(C64::new(4.0 * t / 9.0, 0.0));
    Ok(g)
}

/// `exp(G)` with `G` from [`kerr_generator`], exponentiated through the
/// hermitian matrix `−iG`.
pub fn kerr_target_unitary(t: f64, dim: usize) -> Result<FockOperator> {
    if !t.is_finite() {
        return Err(invalid("Kerr amplitude must be finite"));
    }
    if t == 0.0 {
        return Ok(FockOperator::identity(dim));
    }
    let g = kerr_generator(t, dim)?;
    let h = g.scale(C64::new(0.0, -1.0));
    unitary_from_generator(&h, 1.0)
}
