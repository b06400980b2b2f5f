//! Gate sequences built from phase gates `exp(i Σ c_k Q^k)` diagonal in `X`
//! or `P`, and the Kerr decompositions assembled from them.
//!
//! A [`GateSequence`] lists gates in application order: `terms[0]` acts on
//! the state first, so it is the rightmost factor of the written product.

pub mod verify;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fock::{hermitian_eigen, quadrature_operators, CMatrix, CVector, FockOperator, FockState, C64};
use crate::grid::{apply_phase_polynomial, polynomial_value, GridState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrature {
    X,
    P,
}

impl Quadrature {
    pub fn other(self) -> Self {
        match self {
            Self::X => Self::P,
            Self::P => Self::X,
        }
    }
}

/// One phase gate `exp(i Σ_k c_k Q^k)`, powers `1..=4`. An empty coefficient
/// map is the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateTerm {
    pub basis: Quadrature,
    pub coeffs: BTreeMap<u32, f64>,
}

impl GateTerm {
    pub fn new(basis: Quadrature, coeffs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let coeffs: BTreeMap<u32, f64> = coeffs.into_iter().collect();
        for (&k, &c) in &coeffs {
            if !(1..=4).contains(&k) {
                return Err(invalid(format!("gate power {k} outside 1..=4")));
            }
            if !c.is_finite() {
                return Err(invalid(format!("non-finite coefficient for power {k}")));
            }
        }
        Ok(Self { basis, coeffs })
    }

    pub fn identity(basis: Quadrature) -> Self {
        Self { basis, coeffs: BTreeMap::new() }
    }

    pub fn is_identity(&self) -> bool {
        self.coeffs.values().all(|&c| c == 0.0)
    }

    pub fn coeff(&self, power: u32) -> f64 {
        self.coeffs.get(&power).copied().unwrap_or(0.0)
    }

    /// Highest power with a nonzero coefficient (0 for the identity).
    pub fn degree(&self) -> u32 {
        self.coeffs.iter().filter(|(_, &c)| c != 0.0).map(|(&k, _)| k).max().unwrap_or(0)
    }

    pub fn inverse(&self) -> Self {
        Self { basis: self.basis, coeffs: self.coeffs.iter().map(|(&k, &c)| (k, -c)).collect() }
    }

    /// Sum of two same-basis gates (they commute).
    pub fn merge(&self, other: &Self) -> Option<Self> {
        if self.basis != other.basis {
            return None;
        }
        let mut coeffs = self.coeffs.clone();
        for (&k, &c) in &other.coeffs {
            *coeffs.entry(k).or_insert(0.0) += c;
        }
        coeffs.retain(|_, c| *c != 0.0);
        Some(Self { basis: self.basis, coeffs })
    }

    /// `Σ c_k Q^k` as a matrix.
    pub fn hamiltonian(&self, dim: usize) -> Result<FockOperator> {
        let q = quadrature_operators(dim)?;
        let base = match self.basis {
            Quadrature::X => q.x,
            Quadrature::P => q.p,
        };
        let mut h = FockOperator::zeros(dim);
        for (&k, &c) in &self.coeffs {
            h = &h + &base.pow(k).scale(C64::new(c, 0.0));
        }
        Ok(h)
    }
}

/// Ordered product of phase gates; `terms[0]` is applied first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSequence {
    terms: Vec<GateTerm>,
}

impl GateSequence {
    pub fn new(terms: Vec<GateTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("a gate sequence needs at least one term"));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[GateTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(next.terms.iter().cloned());
        Self { terms }
    }

    pub fn repeat(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("repetition count must be positive"));
        }
        Ok(Self { terms: self.terms.iter().cloned().cycle().take(n * self.terms.len()).collect() })
    }

    /// Same gates in the opposite order.
    pub fn reversed(&self) -> Self {
        Self { terms: self.terms.iter().rev().cloned().collect() }
    }

    /// Exact inverse: reversed order, negated coefficients.
    pub fn inverse(&self) -> Self {
        Self { terms: self.terms.iter().rev().map(GateTerm::inverse).collect() }
    }

    /// Adjacent same-basis gates combined; identity gates dropped unless
    /// nothing else remains.
    pub fn merged(&self) -> Self {
        let mut out: Vec<GateTerm> = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            if let Some(last) = out.last_mut() {
                if let Some(m) = last.merge(term) {
                    *last = m;
                    continue;
                }
            }
            out.push(term.clone());
        }
        let non_trivial: Vec<GateTerm> = out.iter().filter(|t| !t.is_identity()).cloned().collect();
        if non_trivial.is_empty() {
            return Self { terms: vec![GateTerm::identity(self.terms[0].basis)] };
        }
        Self { terms: non_trivial }
    }

    pub fn to_json(&self, scheme: Option<&CompositionScheme>) -> Result<String> {
        let doc = SequenceDocument {
            application_order: APPLICATION_ORDER.to_string(),
            scheme: scheme.cloned(),
            terms: self.terms.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<CompositionScheme>)> {
        let doc: SequenceDocument = serde_json::from_str(text)?;
        if doc.application_order != APPLICATION_ORDER {
            return Err(invalid(format!("unsupported application order `{}`", doc.application_order)));
        }
        let terms =
            doc.terms.into_iter().map(|t| GateTerm::new(t.basis, t.coeffs)).collect::<Result<Vec<_>>>()?;
        Ok((Self::new(terms)?, doc.scheme))
    }
}

const APPLICATION_ORDER: &str = "first_term_applied_first";

#[derive(Serialize, Deserialize)]
struct SequenceDocument {
    application_order: String,
    scheme: Option<CompositionScheme>,
    terms: Vec<GateTerm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    FirstOrder,
    Separated,
    Q2,
    Q2Inverse,
    Q2Reversed,
    Q2InvReversed,
    ThirdOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q2Variant {
    Q2,
    Inverse,
    Reversed,
    InvReversed,
}

impl Q2Variant {
    /// The variant whose sequence equals this one with `t → −t`.
    pub fn negated(self) -> Self {
        match self {
            Self::Q2 => Self::InvReversed,
            Self::InvReversed => Self::Q2,
            Self::Reversed => Self::Inverse,
            Self::Inverse => Self::Reversed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionScheme {
    pub kind: SchemeKind,
    pub t: f64,
    pub repetitions: usize,
}

impl CompositionScheme {
    pub fn new(kind: SchemeKind, t: f64, repetitions: usize) -> Result<Self> {
        if t == 0.0 || !t.is_finite() {
            return Err(invalid("scheme amplitude must be finite and nonzero"));
        }
        if repetitions == 0 {
            return Err(invalid("repetition count must be positive"));
        }
        Ok(Self { kind, t, repetitions })
    }

    /// One repetition.
    pub fn base_sequence(&self) -> Result<GateSequence> {
        match self.kind {
            SchemeKind::FirstOrder => kerr_first_order(self.t),
            SchemeKind::Separated => kerr_separated(self.t),
            SchemeKind::Q2 => q2_family(self.t, Q2Variant::Q2),
            SchemeKind::Q2Inverse => q2_family(self.t, Q2Variant::Inverse),
            SchemeKind::Q2Reversed => q2_family(self.t, Q2Variant::Reversed),
            SchemeKind::Q2InvReversed => q2_family(self.t, Q2Variant::InvReversed),
            SchemeKind::ThirdOrder => third_order(self.t),
        }
    }

    pub fn sequence(&self) -> Result<GateSequence> {
        repeat_scheme(self, self.repetitions)
    }
}

fn term(basis: Quadrature, coeffs: &[(u32, f64)]) -> GateTerm {
    GateTerm { basis, coeffs: coeffs.iter().copied().collect() }
}

fn check_weak_amplitude(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 0.5) {
        return Err(invalid(format!("Kerr amplitude must lie in (0, 0.5], got {t}")));
    }
    Ok(())
}

/// Four-gate solution, written `e^{i√t P³} e^{(4/9)i√t X³} e^{−i√t P³ + itP⁴}
/// e^{−(4/9)i√t X³ + itX⁴}`.
pub fn kerr_first_order(t: f64) -> Result<GateSequence> {
    check_weak_amplitude(t)?;
    let s = t.sqrt();
    Ok(GateSequence {
        terms: vec![
            term(Quadrature::X, &[(3, -4.0 / 9.0 * s), (4, t)]),
            term(Quadrature::P, &[(3, -s), (4, t)]),
            term(Quadrature::X, &[(3, 4.0 / 9.0 * s)]),
            term(Quadrature::P, &[(3, s)]),
        ],
    })
}

/// Six-gate variant with every cubic and quartic gate on its own, written
/// `e^{i√t P³} e^{(4/9)i√t X³} e^{−i√t P³} e^{itP⁴} e^{−(4/9)i√t X³} e^{itX⁴}`.
pub fn kerr_separated(t: f64) -> Result<GateSequence> {
    check_weak_amplitude(t)?;
    let s = t.sqrt();
    Ok(GateSequence {
        terms: vec![
            term(Quadrature::X, &[(4, t)]),
            term(Quadrature::X, &[(3, -4.0 / 9.0 * s)]),
            term(Quadrature::P, &[(4, t)]),
            term(Quadrature::P, &[(3, -s)]),
            term(Quadrature::X, &[(3, 4.0 / 9.0 * s)]),
            term(Quadrature::P, &[(3, s)]),
        ],
    })
}

/// Second-order block with amplitude `tau` and cubic coefficients divided
/// by `scale`. Written product for `Q2`:
/// `e^{iτX⁴/2} e^{iτP⁴ + iτP³} e^{i(4/9)τX³} e^{−iτP³} e^{iτX⁴/2 − i(4/9)τX³}`.
pub(crate) fn q2_scaled(tau: f64, scale: f64, variant: Q2Variant) -> GateSequence {
    let c = |v: f64| v / scale;
    let product = |tau: f64| {
        vec![
            term(Quadrature::X, &[(4, tau / 2.0)]),
            term(Quadrature::P, &[(3, c(tau)), (4, tau)]),
            term(Quadrature::X, &[(3, c(4.0 / 9.0 * tau))]),
            term(Quadrature::P, &[(3, c(-tau))]),
            term(Quadrature::X, &[(3, c(-4.0 / 9.0 * tau)), (4, tau / 2.0)]),
        ]
    };
    // Written products list the first-applied gate last.
    let terms: Vec<GateTerm> = match variant {
        Q2Variant::Q2 => product(tau).into_iter().rev().collect(),
        Q2Variant::Reversed => product(tau),
        Q2Variant::Inverse => product(-tau),
        Q2Variant::InvReversed => product(-tau).into_iter().rev().collect(),
    };
    GateSequence { terms }
}

/// The second-order family with cubic gates rescaled by `1/√|t|`. A
/// negative `t` substitutes formally, which is the same as using the
/// [`Q2Variant::negated`] variant at `|t|`.
pub fn q2_family(t: f64, variant: Q2Variant) -> Result<GateSequence> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("amplitude must be finite and nonzero"));
    }
    let scale = t.abs().sqrt();
    if t > 0.0 {
        Ok(q2_scaled(t, scale, variant))
    } else {
        Ok(q2_scaled(-t, scale, variant.negated()))
    }
}

/// `[c₁, c₂, c₃, c₄]` of the third-order composition.
pub fn third_order_coefficients() -> [f64; 4] {
    let r15 = 15f64.sqrt();
    [(9.0 - r15) / 6.0, (-3.0 + r15) / 3.0, -(5.0f64 / 3.0).sqrt(), (3.0 + r15) / 6.0]
}

/// `Q₂(c₁t) Q₂ʳᵉᵛ(c₂t) Q₂(c₃t) Q₂ʳᵉᵛ(c₄t)` with every cubic gate divided by
/// the common `√t`; segments with a negative `cᵢ` use the negated variant
/// at `|cᵢ|t`. Negative `t` gives the exact inverse of `third_order(|t|)`.
pub fn third_order(t: f64) -> Result<GateSequence> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("amplitude must be finite and nonzero"));
    }
    if t < 0.0 {
        return Ok(third_order(-t)?.inverse());
    }
    Ok(third_order_scaled(t, t.sqrt()))
}

/// Third-order composition for `t > 0` with cubic gates divided by `scale`.
pub(crate) fn third_order_scaled(t: f64, scale: f64) -> GateSequence {
    let c = third_order_coefficients();
    let segments =
        [(c[3], Q2Variant::Reversed), (c[2], Q2Variant::Q2), (c[1], Q2Variant::Reversed), (c[0], Q2Variant::Q2)];
    let mut terms = Vec::new();
    for (ci, variant) in segments {
        let tau = ci * t;
        let seq = if tau >= 0.0 {
            q2_scaled(tau, scale, variant)
        } else {
            q2_scaled(-tau, scale, variant.negated())
        };
        terms.extend(seq.terms);
    }
    GateSequence { terms }.merged()
}

/// `n` back-to-back copies of one repetition of `scheme` (no merging).
pub fn repeat_scheme(scheme: &CompositionScheme, n: usize) -> Result<GateSequence> {
    scheme.base_sequence()?.repeat(n)
}

/// Cached eigenbases of `X` and `P` for one truncation. Every gate is a
/// function of one quadrature, so `exp(i p(Q)) = V exp(i p(Λ)) V†`.
#[derive(Clone, Debug)]
pub struct FockCompiler {
    dim: usize,
    x: (Vec<f64>, CMatrix),
    p: (Vec<f64>, CMatrix),
}

impl FockCompiler {
    pub fn new(dim: usize) -> Result<Self> {
        let q = quadrature_operators(dim)?;
        Ok(Self { dim, x: hermitian_eigen(&q.x)?, p: hermitian_eigen(&q.p)? })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn basis(&self, b: Quadrature) -> &(Vec<f64>, CMatrix) {
        match b {
            Quadrature::X => &self.x,
            Quadrature::P => &self.p,
        }
    }

    fn phases(&self, term: &GateTerm) -> Vec<C64> {
        let (values, _) = self.basis(term.basis);
        values.iter().map(|&l| C64::from_polar(1.0, polynomial_value(&term.coeffs, l))).collect()
    }

    pub fn term_unitary(&self, term: &GateTerm) -> FockOperator {
        if term.is_identity() {
            return FockOperator::identity(self.dim);
        }
        let (_, v) = self.basis(term.basis);
        let mut scaled = v.clone();
        for (j, w) in self.phases(term).into_iter().enumerate() {
            for z in scaled.column_mut(j).iter_mut() {
                *z *= w;
            }
        }
        FockOperator::from_matrix_unchecked(scaled * v.adjoint())
    }

    pub fn compile(&self, seq: &GateSequence) -> FockOperator {
        let mut u = FockOperator::identity(self.dim);
        for t in &seq.terms {
            u = &self.term_unitary(t) * &u;
        }
        u
    }

    pub fn apply_term(&self, term: &GateTerm, state: &CVector) -> CVector {
        if term.is_identity() {
            return state.clone();
        }
        let (_, v) = self.basis(term.basis);
        let mut k = v.ad_mul(state);
        for (z, w) in k.iter_mut().zip(self.phases(term)) {
            *z *= w;
        }
        v * k
    }

    pub fn apply(&self, seq: &GateSequence, state: &FockState) -> Result<FockState> {
        if state.dim() != self.dim {
            return Err(invalid(format!(
                "state dimension {} does not match compiler dimension {}",
                state.dim(),
                self.dim
            )));
        }
        let mut v = state.coeffs().clone();
        for t in &seq.terms {
            v = self.apply_term(t, &v);
        }
        FockState::from_coeffs(v.iter().copied().collect())
    }
}

/// Matrix of the whole sequence, `U_last ⋯ U_first`.
pub fn compile_sequence(seq: &GateSequence, dim: usize) -> Result<FockOperator> {
    Ok(FockCompiler::new(dim)?.compile(seq))
}

/// Sequence applied gate by gate on the position grid.
pub fn apply_sequence(seq: &GateSequence, s: &GridState) -> Result<GridState> {
    seq.terms.iter().try_fold(s.clone(), |acc, t| apply_phase_polynomial(&acc, t.basis, &t.coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity_error, interior_top, kerr_target_unitary, unitary_from_generator, StateVector};
    use crate::grid::{fock_to_position, GridSpec};

    fn coherent(dim: usize) -> FockState {
        FockState::coherent(C64::new(1.0, 0.0), dim).unwrap()
    }

    #[test]
    fn first_order_first_gate() {
        let seq = kerr_first_order(1e-3).unwrap();
        let first = &seq.terms()[0];
        assert_eq!(first.basis, Quadrature::X);
        assert!((first.coeff(3) + 4.0 / 9.0 * 0.0316228).abs() < 1e-7);
        assert_eq!(first.coeff(4), 1e-3);
        assert_eq!(seq.len(), 4);
        assert!(kerr_first_order(0.0).is_err());
        assert!(kerr_first_order(-1e-3).is_err());
    }

    #[test]
    fn separated_shape() {
        assert_eq!(kerr_separated(1e-3).unwrap().len(), 6);
    }

    #[test]
    fn separated_matches_first_order() {
        let dim = 60;
        let c = FockCompiler::new(dim).unwrap();
        let psi = coherent(dim);
        let a = c.apply(&kerr_first_order(1e-3).unwrap(), &psi).unwrap();
        let b = c.apply(&kerr_separated(1e-3).unwrap(), &psi).unwrap();
        assert!(fidelity_error(&a, &b).unwrap() < 1e-5);
    }

    #[test]
    fn q2_shape_and_inverse() {
        let seq = q2_family(1e-3, Q2Variant::Q2).unwrap();
        assert_eq!(seq.len(), 5);
        let middle = &seq.terms()[2];
        assert_eq!(middle.basis, Quadrature::X);
        assert_eq!(middle.degree(), 3);
        assert_eq!(middle.coeffs.len(), 1);

        let dim = 60;
        let c = FockCompiler::new(dim).unwrap();
        let both = seq.then(&q2_family(1e-3, Q2Variant::Inverse).unwrap());
        let psi = coherent(dim);
        let out = c.apply(&both, &psi).unwrap();
        assert!(fidelity_error(&psi, &out).unwrap() < 1e-9);
    }

    #[test]
    fn reversal_law() {
        let dim = 20;
        let c = FockCompiler::new(dim).unwrap();
        let q = q2_family(2e-3, Q2Variant::Q2).unwrap();
        let r = q2_family(2e-3, Q2Variant::Reversed).unwrap();
        assert_eq!(r, q.reversed());
        let manual = q.terms().iter().fold(FockOperator::identity(dim), |u, t| &u * &c.term_unitary(t));
        let d = (c.compile(&r).matrix() - manual.matrix()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(d < 1e-13, "{d}");
    }

    #[test]
    fn printed_inverse_and_inverse_reversed_forms() {
        let t: f64 = 1e-2;
        let s = t.sqrt();
        let inv = q2_family(t, Q2Variant::Inverse).unwrap();
        // Written: e^{−iτX⁴/2 + i(4/9)τX³} e^{iτP³} e^{−i(4/9)τX³} e^{−iτP⁴−iτP³} e^{−iτX⁴/2}
        let expected = [
            term(Quadrature::X, &[(4, -t / 2.0)]),
            term(Quadrature::P, &[(3, -t / s), (4, -t)]),
            term(Quadrature::X, &[(3, -4.0 / 9.0 * t / s)]),
            term(Quadrature::P, &[(3, t / s)]),
            term(Quadrature::X, &[(3, 4.0 / 9.0 * t / s), (4, -t / 2.0)]),
        ];
        // `expected` is listed in application order.
        assert_eq!(inv.terms(), &expected[..]);
        let ir = q2_family(t, Q2Variant::InvReversed).unwrap();
        assert_eq!(ir.terms(), &expected.iter().rev().cloned().collect::<Vec<_>>()[..]);
        assert_eq!(q2_family(-t, Q2Variant::Q2).unwrap(), ir);
    }

    #[test]
    fn third_order_coefficient_identities() {
        let c = third_order_coefficients();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((c[0] * c[0] - c[1] * c[1] + c[2] * c[2] - c[3] * c[3] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn third_order_merges_junctions() {
        let seq = third_order(1e-3).unwrap();
        assert_eq!(seq.len(), 17);
        for w in seq.terms().windows(2) {
            assert_ne!(w[0].basis, w[1].basis);
        }
        let total_x4: f64 =
            seq.terms().iter().filter(|t| t.basis == Quadrature::X).map(|t| t.coeff(4)).sum();
        assert!((total_x4 - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn third_order_negative_is_inverse() {
        let dim = 30;
        let c = FockCompiler::new(dim).unwrap();
        let psi = coherent(dim);
        let seq = third_order(1e-3).unwrap().then(&third_order(-1e-3).unwrap());
        assert!(fidelity_error(&psi, &c.apply(&seq, &psi).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn single_term_matches_generator() {
        let dim = 40;
        let q = quadrature_operators(dim).unwrap();
        let seq = GateSequence::new(vec![term(Quadrature::X, &[(3, 1e-3)])]).unwrap();
        let u = compile_sequence(&seq, dim).unwrap();
        let v = unitary_from_generator(&q.x.pow(3), 1e-3).unwrap();
        let d = (u.matrix() - v.matrix()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(d < 1e-10, "{d}");
        let seq = GateSequence::new(vec![term(Quadrature::P, &[(4, 2e-3), (2, -0.1)])]).unwrap();
        let u = compile_sequence(&seq, dim).unwrap();
        let v = unitary_from_generator(&seq.terms()[0].hamiltonian(dim).unwrap(), 1.0).unwrap();
        let d = (u.matrix() - v.matrix()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn identity_term_compiles_to_identity() {
        let seq = GateSequence::new(vec![GateTerm::identity(Quadrature::P)]).unwrap();
        assert_eq!(compile_sequence(&seq, 8).unwrap(), FockOperator::identity(8));
        assert!(GateSequence::new(vec![]).is_err());
        assert!(GateTerm::new(Quadrature::X, [(5, 1.0)]).is_err());
    }

    #[test]
    fn single_photon_first_order_error() {
        let dim = 60;
        let psi = FockState::superposition(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)], dim).unwrap();
        let c = FockCompiler::new(dim).unwrap();
        let approx = c.apply(&kerr_first_order(1e-3).unwrap(), &psi).unwrap();
        let exact = kerr_target_unitary(1e-3, dim).unwrap().apply(&psi).unwrap();
        let log10 = fidelity_error(&exact, &approx).unwrap().log10();
        assert!((log10 + 7.9853).abs() < 0.05, "{log10}");
    }

    #[test]
    fn compiled_matrix_and_state_paths_agree() {
        let dim = 30;
        let c = FockCompiler::new(dim).unwrap();
        let seq = third_order(1e-3).unwrap();
        let psi = coherent(dim);
        let a = c.compile(&seq).apply(&psi).unwrap();
        let b = c.apply(&seq, &psi).unwrap();
        assert!((a.inner(&b).unwrap().norm() - 1.0).abs() < 1e-12);
        let k = interior_top(dim, dim / 4);
        assert!(c.compile(&seq).interior_unitarity_defect(k) < 1e-8);
    }

    #[test]
    fn grid_and_fock_paths_agree() {
        let dim = 60;
        let g = GridSpec::default();
        let psi = coherent(dim);
        let seq = kerr_separated(1e-2).unwrap();
        let fock = FockCompiler::new(dim).unwrap().apply(&seq, &psi).unwrap();
        let grid = apply_sequence(&seq, &fock_to_position(&psi, &g).unwrap()).unwrap();
        let eps = fidelity_error(&grid, &fock_to_position(&fock, &g).unwrap()).unwrap();
        assert!(eps < 1e-6, "{eps}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let scheme = CompositionScheme::new(SchemeKind::ThirdOrder, 1e-3, 2).unwrap();
        let seq = scheme.sequence().unwrap();
        let text = seq.to_json(Some(&scheme)).unwrap();
        assert!(text.contains("application_order"));
        let (back, meta) = GateSequence::from_json(&text).unwrap();
        assert_eq!(back, seq);
        assert_eq!(meta, Some(scheme));
    }

    #[test]
    fn repeat_lengths() {
        let scheme = CompositionScheme::new(SchemeKind::FirstOrder, 1e-3, 1).unwrap();
        assert_eq!(repeat_scheme(&scheme, 1).unwrap(), kerr_first_order(1e-3).unwrap());
        assert_eq!(repeat_scheme(&scheme, 7).unwrap().len(), 28);
        assert!(CompositionScheme::new(SchemeKind::Q2, 0.0, 1).is_err());
        assert!(CompositionScheme::new(SchemeKind::Q2, 1e-3, 0).is_err());
    }
}
