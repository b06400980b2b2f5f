//! Two-mode operators and the exact quartic decomposition identities.
//!
//! Tensor ordering: mode 1 is the slow index, so basis state `|i⟩|j⟩` sits
//! at row `i * dim + j`.

use serde::{Deserialize, Serialize};

use super::{hermitian_eigen, quadrature_operators, spectral_norm, CMatrix, FockOperator, C64};
use crate::error::{invalid, Error, Result};

/// Default cap on the two-mode dimension `dim²` (64 levels per mode).
pub const DEFAULT_TWO_MODE_CAP: usize = 4096;

/// Dense operator on two truncated modes.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoModeOperator {
    dim: usize,
    mat: CMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
}

impl TwoModeOperator {
    pub fn identity(dim: usize) -> Self {
        Self { dim, mat: CMatrix::identity(dim * dim, dim * dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    /// `a ⊗ b`.
    pub fn kron(a: &FockOperator, b: &FockOperator) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(invalid("both modes must share one truncation dimension"));
        }
        Ok(Self { dim: a.dim(), mat: a.matrix().kronecker(b.matrix()) })
    }

    /// Single-mode operator acting on one mode, identity on the other.
    pub fn embed(op: &FockOperator, mode: Mode) -> Self {
        let id = FockOperator::identity(op.dim());
        let mat = match mode {
            Mode::First => op.matrix().kronecker(id.matrix()),
            Mode::Second => id.matrix().kronecker(op.matrix()),
        };
        Self { dim: op.dim(), mat }
    }

    /// `exp(i c A ⊗ B)` for hermitian `A`, `B`, assembled from the two
    /// single-mode eigenbases.
    pub fn exp_product(a: &FockOperator, b: &FockOperator, c: f64) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(invalid("both modes must share one truncation dimension"));
        }
        let d = a.dim();
        let (la, va) = hermitian_eigen(a)?;
        let (lb, vb) = hermitian_eigen(b)?;
        let vb_adj = vb.adjoint();
        // blocks[m] = Vb diag(exp(i c λ_m μ_n)) Vb†
        let blocks: Vec<CMatrix> = la
            .iter()
            .map(|&lm| {
                let mut scaled = vb.clone();
                for (n, &mu) in lb.iter().enumerate() {
                    let w = C64::from_polar(1.0, c * lm * mu);
                    for z in scaled.column_mut(n).iter_mut() {
                        *z *= w;
                    }
                }
                scaled * &vb_adj
            })
            .collect();
        let mut mat = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for k in 0..d {
                let mut acc = CMatrix::zeros(d, d);
                for (m, block) in blocks.iter().enumerate() {
                    let w = va[(i, m)] * va[(k, m)].conj();
                    acc += block * w;
                }
                mat.view_mut((i * d, k * d), (d, d)).copy_from(&acc);
            }
        }
        Ok(Self { dim: d, mat })
    }

    /// `exp(i c H) ⊗ I` or `I ⊗ exp(i c H)`.
    pub fn exp_single(h: &FockOperator, c: f64, mode: Mode) -> Result<Self> {
        Ok(Self::embed(&super::unitary_from_generator(h, c)?, mode))
    }

    /// Row indices of `|i⟩|j⟩` with `i, j ≤ n`.
    pub fn interior_indices(&self, n: usize) -> Vec<usize> {
        let n = n.min(self.dim - 1);
        (0..=n).flat_map(|i| (0..=n).map(move |j| i * self.dim + j)).collect()
    }

    /// Columns of the interior block, `M Π_n`.
    pub fn interior_columns(&self, n: usize) -> CMatrix {
        self.mat.select_columns(&self.interior_indices(n))
    }

    /// `‖(U†U − I) Π_n‖`.
    pub fn interior_unitarity_defect(&self, n: usize) -> f64 {
        let cols = self.interior_columns(n);
        let gram = self.mat.adjoint() * &cols;
        let mut id = CMatrix::zeros(gram.nrows(), gram.ncols());
        for (c, &r) in self.interior_indices(n).iter().enumerate() {
            id[(r, c)] = C64::new(1.0, 0.0);
        }
        spectral_norm(&(gram - id))
    }
}

impl std::ops::Mul for &TwoModeOperator {
    type Output = TwoModeOperator;
    fn mul(self, rhs: &TwoModeOperator) -> TwoModeOperator {
        TwoModeOperator { dim: self.dim, mat: &self.mat * &rhs.mat }
    }
}

/// Interior residuals of the two exact identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixResiduals {
    /// Seven-factor realization of `exp((3/2) i t1² t2 X1² X2)`.
    pub residual1: f64,
    /// Group commutator `e^A e^B e^{−A} e^{−B}`, `A = i t X1² P2`,
    /// `B = i t X1² X2`, against `exp(i (t²/2) X1⁴)`.
    pub residual2: f64,
    /// Same target with the factor order `e^A e^B e^{−B} e^{−A}`, which is
    /// the identity operator.
    pub residual2_printed_order: f64,
    /// Highest per-mode level included in the interior block.
    pub interior_levels: usize,
}

/// Applies `factors` right to left (last factor acts first) to `block`.
fn apply_chain(factors: &[&TwoModeOperator], block: &CMatrix) -> CMatrix {
    factors.iter().rev().fold(block.clone(), |acc, f| f.matrix() * acc)
}

pub fn verify_appendix_identities(t1: f64, t2: f64, dim: usize) -> Result<AppendixResiduals> {
    verify_appendix_identities_with_cap(t1, t2, dim, DEFAULT_TWO_MODE_CAP)
}

/// Identity 2 uses `t = t1`.
pub fn verify_appendix_identities_with_cap(
    t1: f64,
    t2: f64,
    dim: usize,
    cap: usize,
) -> Result<AppendixResiduals> {
    if !t1.is_finite() || !t2.is_finite() {
        return Err(invalid("amplitudes must be finite"));
    }
    let requested = dim.saturating_mul(dim);
    if requested > cap {
        return Err(Error::MemoryGuard { requested, cap });
    }
    let q = quadrature_operators(dim)?;
    let x2 = q.x.pow(2);
    let x3 = q.x.pow(3);
    let n = super::default_margin(dim).max(1).min(dim - 1);

    let identity = TwoModeOperator::identity(dim);
    let block = identity.interior_columns(n);

    let lhs1 = TwoModeOperator::exp_product(&x2, &q.x, 1.5 * t1 * t1 * t2)?;
    let cubic_plus = TwoModeOperator::exp_single(&x3, t2, Mode::Second)?;
    let cubic_minus = TwoModeOperator::exp_single(&x3, -t2, Mode::Second)?;
    let couple = TwoModeOperator::exp_product(&q.x, &q.p, t1)?;
    let couple_back = TwoModeOperator::exp_product(&q.x, &q.p, -2.0 * t1)?;
    let rhs1 = apply_chain(
        &[&cubic_minus, &couple, &cubic_plus, &couple_back, &cubic_plus, &couple, &cubic_minus],
        &block,
    );
    let residual1 = spectral_norm(&(lhs1.interior_columns(n) - rhs1));

    let t = t1;
    let lhs2 = TwoModeOperator::exp_single(&q.x.pow(4), t * t / 2.0, Mode::First)?;
    let a = TwoModeOperator::exp_product(&x2, &q.p, t)?;
    let a_inv = TwoModeOperator::exp_product(&x2, &q.p, -t)?;
    let b = TwoModeOperator::exp_product(&x2, &q.x, t)?;
    let b_inv = TwoModeOperator::exp_product(&x2, &q.x, -t)?;
    let lhs2_cols = lhs2.interior_columns(n);
    let group = apply_chain(&[&a, &b, &a_inv, &b_inv], &block);
    let printed = apply_chain(&[&a, &b, &b_inv, &a_inv], &block);
    Ok(AppendixResiduals {
        residual1,
        residual2: spectral_norm(&(&lhs2_cols - group)),
        residual2_printed_order: spectral_norm(&(&lhs2_cols - printed)),
        interior_levels: n,
    })
}
