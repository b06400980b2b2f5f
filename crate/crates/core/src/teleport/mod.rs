//! Measurement-based gate teleportation on the position grid.
//!
//! One step couples the input to an ancilla `α(x)`, measures the input's
//! `P` quadrature with outcome `β`, and leaves `A(X) F† e^{2iβX} ψ`, i.e.
//! `ψ_out(x) = α(x) (F†ψ)(x − β)`. Outcomes are binned to the position
//! lattice so the shift is exact.

pub mod protocol;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{GateSequence, GateTerm, Quadrature};
use crate::error::{invalid, Error, Result};
use crate::grid::{apply_phase_polynomial, fourier_gate, FourierDirection, GridSpec, GridState};

pub use protocol::{
    deterministic_schedule, run_protocol, run_protocol_fock, run_sequence_protocol, AncillaModel,
    FourierStrategy, OutcomePolicy, PlannedStep, ProtocolConfig, ProtocolMode, ProtocolRun,
    ProtocolTranscript, StepRecord, StepRole,
};

/// A homodyne outcome snapped to the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeOutcome {
    /// Lattice index offset, `β = m Δx`.
    pub m: i64,
    pub beta: f64,
    /// `β_requested − β`.
    pub rounding: f64,
}

pub fn snap_outcome(beta: f64, g: &GridSpec) -> Result<LatticeOutcome> {
    if !beta.is_finite() {
        return Err(invalid("outcome must be finite"));
    }
    let half = (g.n_points / 2) as i64;
    let m = (beta / g.dx).round();
    if m < -(half as f64) || m >= half as f64 {
        return Err(Error::Domain(format!(
            "outcome {beta} lies outside the grid range [{}, {})",
            g.x_min(),
            g.x_max()
        )));
    }
    let m = m as i64;
    let snapped = m as f64 * g.dx;
    Ok(LatticeOutcome { m, beta: snapped, rounding: beta - snapped })
}

fn same_grid(a: &GridState, b: &GridState) -> Result<()> {
    if a.spec() != b.spec() {
        return Err(invalid("input and ancilla must share one grid"));
    }
    Ok(())
}

/// Unnormalized `α(x) (F†ψ)(x − β)` together with the snapped outcome.
fn raw_step(input: &GridState, ancilla: &GridState, beta: f64) -> Result<(GridState, LatticeOutcome)> {
    same_grid(input, ancilla)?;
    let outcome = snap_outcome(beta, input.spec())?;
    let phi = fourier_gate(input, FourierDirection::Inverse)?.shift(outcome.m);
    let values = phi.values().iter().zip(ancilla.values()).map(|(p, a)| p * a).collect();
    Ok((GridState::new(*input.spec(), values)?, outcome))
}

/// `A(X) F† e^{2iβX} ψ`, renormalized.
pub fn teleport_step(input: &GridState, ancilla: &GridState, beta: f64) -> Result<GridState> {
    teleport_step_detailed(input, ancilla, beta).map(|(s, _)| s)
}

pub fn teleport_step_detailed(
    input: &GridState,
    ancilla: &GridState,
    beta: f64,
) -> Result<(GridState, LatticeOutcome)> {
    let (raw, outcome) = raw_step(input, ancilla, beta)?;
    let out = raw.normalized().map_err(|_| {
        Error::NumericalFailure(format!("outcome {} has vanishing probability", outcome.beta))
    })?;
    Ok((out, outcome))
}

/// Step for a gate diagonal in `P`: `F ∘ T ∘ F†`, giving
/// `A(P) e^{2iβX} F† ψ` with the same position-space ancilla profile.
pub fn teleport_step_p(input: &GridState, ancilla: &GridState, beta: f64) -> Result<(GridState, LatticeOutcome)> {
    let pre = fourier_gate(input, FourierDirection::Inverse)?;
    let (mid, outcome) = teleport_step_detailed(&pre, ancilla, beta)?;
    Ok((fourier_gate(&mid, FourierDirection::Forward)?, outcome))
}

/// Outcome density on the lattice, `p(β_m) = Σ_j |α_j|² |(F†ψ)_{j−m}|² Δx`,
/// indexed by `m + N/2`.
pub fn outcome_density(input: &GridState, ancilla: &GridState) -> Result<Vec<f64>> {
    same_grid(input, ancilla)?;
    let g = *input.spec();
    let n = g.n_points;
    let phi = fourier_gate(&input.clone().normalized()?, FourierDirection::Inverse)?;
    let a: Vec<f64> = ancilla.clone().normalized()?.values().iter().map(|v| v.norm_sqr()).collect();
    let b: Vec<f64> = phi.values().iter().map(|v| v.norm_sqr()).collect();
    let support: Vec<usize> = (0..n).filter(|&j| a[j] > 0.0).collect();
    let half = n / 2;
    let density: Vec<f64> = (0..n)
        .map(|i| {
            let m = i as i64 - half as i64;
            let acc: f64 = support
                .iter()
                .map(|&j| a[j] * b[(j as i64 - m).rem_euclid(n as i64) as usize])
                .sum();
            acc * g.dx
        })
        .collect();
    let total: f64 = density.iter().sum::<f64>() * g.dx;
    if !(total > 1e-12) {
        return Err(Error::NumericalFailure("outcome density has no mass".into()));
    }
    Ok(density)
}

/// Outcome density for a `P`-diagonal step.
pub fn outcome_density_p(input: &GridState, ancilla: &GridState) -> Result<Vec<f64>> {
    outcome_density(&fourier_gate(input, FourierDirection::Inverse)?, ancilla)
}

/// `∫_{|β| ≤ w} p(β) dβ` on the lattice.
pub fn window_probability(density: &[f64], g: &GridSpec, window: f64) -> f64 {
    let half = (g.n_points / 2) as i64;
    density
        .iter()
        .enumerate()
        .filter(|(i, _)| ((*i as i64 - half) as f64 * g.dx).abs() <= window)
        .map(|(_, p)| p * g.dx)
        .sum()
}

/// Draws a lattice outcome from a density produced by [`outcome_density`].
pub fn sample_outcome<R: Rng + ?Sized>(density: &[f64], g: &GridSpec, rng: &mut R) -> f64 {
    let total: f64 = density.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let half = (g.n_points / 2) as i64;
    let mut last = 0;
    for (i, &p) in density.iter().enumerate() {
        if p > 0.0 {
            last = i;
        }
        acc += p;
        if u < acc {
            return (i as i64 - half) as f64 * g.dx;
        }
    }
    (last as i64 - half) as f64 * g.dx
}

pub fn homodyne_sample<R: Rng + ?Sized>(input: &GridState, ancilla: &GridState, rng: &mut R) -> Result<f64> {
    let density = outcome_density(input, ancilla)?;
    Ok(sample_outcome(&density, input.spec(), rng))
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `O = A e^{2iβP} A†` for `A = exp(i f(X))`, or the `P`-basis analogue
/// `A(P) e^{−2iβX} A†(P)`, in application order: the displacement, then
/// `exp(i D)` with `D(q) = f(q) − f(q + β)` (constant dropped).
pub fn correction_sequence(gate: &GateTerm, beta: f64) -> Result<GateSequence> {
    if !beta.is_finite() {
        return Err(invalid("outcome must be finite"));
    }
    if gate.coeffs.keys().any(|&k| k > 4) {
        return Err(invalid("gate degree exceeds 4"));
    }
    let degree = gate.coeffs.keys().copied().max().unwrap_or(0);
    let mut diff = BTreeMap::new();
    for j in 1..degree {
        let d: f64 = -(j + 1..=degree).map(|k| gate.coeff(k) * binomial(k, j) * beta.powi((k - j) as i32)).sum::<f64>();
        diff.insert(j, d);
    }
    let (shift_basis, shift) = match gate.basis {
        Quadrature::X => (Quadrature::P, 2.0 * beta),
        Quadrature::P => (Quadrature::X, -2.0 * beta),
    };
    GateSequence::new(vec![GateTerm::new(shift_basis, [(1, shift)])?, GateTerm::new(gate.basis, diff)?])
}

/// `F^{−k} G F^{k}`: `X^m → (−P)^m`, `P → X` per power of `F†…F`.
pub fn fourier_conjugate(term: &GateTerm, k: i64) -> GateTerm {
    let mut out = term.clone();
    for _ in 0..k.rem_euclid(4) {
        out = match out.basis {
            Quadrature::X => GateTerm {
                basis: Quadrature::P,
                coeffs: out.coeffs.iter().map(|(&m, &c)| (m, if m % 2 == 1 { -c } else { c })).collect(),
            },
            Quadrature::P => GateTerm { basis: Quadrature::X, coeffs: out.coeffs },
        };
    }
    out
}

/// Primed sequence: the `k`-th applied of `n` gates becomes `F^{n−k} G F^{k−n}`,
/// so a chain of teleportations realizes `G_n ⋯ G_1 F^{−n}`.
pub fn fourier_modify(seq: &GateSequence) -> GateSequence {
    let n = seq.len() as i64;
    let terms = seq
        .terms()
        .iter()
        .enumerate()
        .map(|(i, t)| fourier_conjugate(t, i as i64 + 1 - n))
        .collect();
    GateSequence::new(terms).expect("non-empty input")
}

/// `F^k` for any integer `k` (negative powers use `F†`).
pub fn fourier_power(s: &GridState, k: i64) -> Result<GridState> {
    let r = k.rem_euclid(4);
    let (dir, count) = if r <= 2 { (FourierDirection::Forward, r) } else { (FourierDirection::Inverse, 1) };
    (0..count).try_fold(s.clone(), |acc, _| fourier_gate(&acc, dir))
}

/// Applies a correction (or any sequence) on the grid.
pub fn apply_correction(s: &GridState, seq: &GateSequence) -> Result<GridState> {
    seq.terms().iter().try_fold(s.clone(), |acc, t| apply_phase_polynomial(&acc, t.basis, &t.coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{kerr_first_order, FockCompiler};
    use crate::fock::{fidelity_error, quadrature_operators, FockOperator, FockState, C64};
    use crate::grid::{fock_to_position, position_to_fock};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(g: GridSpec) -> GridState {
        GridState::from_fn(g, |_| C64::new(1.0, 0.0)).normalized().unwrap()
    }

    fn coherent(g: &GridSpec) -> GridState {
        fock_to_position(&FockState::coherent(C64::new(1.0, 0.3), 60).unwrap(), g).unwrap()
    }

    /// `F = diag(iⁿ)` in the Fock basis.
    fn fock_fourier_dagger(dim: usize) -> FockOperator {
        FockOperator::diagonal(&(0..dim).map(|n| C64::new(0.0, -1.0).powu(n as u32)).collect::<Vec<_>>())
    }

    #[test]
    fn flat_ancilla_gives_inverse_fourier() {
        let g = GridSpec::default();
        let psi = coherent(&g);
        let out = teleport_step(&psi, &flat(g), 0.0).unwrap();
        let expected = fourier_gate(&psi, FourierDirection::Inverse).unwrap();
        assert!(fidelity_error(&out, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn cubic_ancilla_matches_fock_route() {
        let g = GridSpec::default();
        let dim = 60;
        let t = 0.01;
        let input = FockState::coherent(C64::new(1.0, 0.3), dim).unwrap();
        let psi = fock_to_position(&input, &g).unwrap();
        let ancilla = GridState::from_fn(g, |x| C64::from_polar(1.0, t * x.powi(3))).normalized().unwrap();
        let out = position_to_fock(&teleport_step(&psi, &ancilla, 0.0).unwrap(), dim).unwrap();
        let compiler = FockCompiler::new(dim).unwrap();
        let rotated = fock_fourier_dagger(dim).apply(&input).unwrap();
        let expected = compiler
            .apply(&GateSequence::new(vec![GateTerm::new(Quadrature::X, [(3, t)]).unwrap()]).unwrap(), &rotated)
            .unwrap();
        assert!(fidelity_error(&out, &expected).unwrap() < 1e-8);
    }

    #[test]
    fn displaced_flat_step_matches_fock_route() {
        let g = GridSpec::default();
        let dim = 60;
        let beta = 0.5;
        let input = FockState::coherent(C64::new(0.5, 0.0), dim).unwrap();
        let psi = fock_to_position(&input, &g).unwrap();
        let (out, outcome) = teleport_step_detailed(&psi, &flat(g), beta).unwrap();
        let out = position_to_fock(&out, dim).unwrap();
        let compiler = FockCompiler::new(dim).unwrap();
        let disp = GateSequence::new(vec![GateTerm::new(Quadrature::X, [(1, 2.0 * outcome.beta)]).unwrap()]).unwrap();
        let expected = fock_fourier_dagger(dim).apply(&compiler.apply(&disp, &input).unwrap()).unwrap();
        assert!(fidelity_error(&out, &expected).unwrap() < 1e-8);
        assert!(outcome.rounding.abs() <= g.dx / 2.0);
    }

    #[test]
    fn outcome_outside_grid() {
        let g = GridSpec::default();
        let psi = coherent(&g);
        assert!(matches!(teleport_step(&psi, &flat(g), 1e3), Err(Error::Domain(_))));
    }

    #[test]
    fn density_normalized_and_symmetric() {
        let g = GridSpec::default();
        let ground = GridState::ground(g);
        // A Gaussian ancilla localizes the outcome density.
        let ancilla = GridState::from_fn(g, |x| C64::new((-(x / 3.0).powi(2)).exp(), 0.0)).normalized().unwrap();
        let p = outcome_density(&ground, &ancilla).unwrap();
        let total: f64 = p.iter().sum::<f64>() * g.dx;
        assert!((total - 1.0).abs() < 1e-6);
        let c = g.center();
        for d in 1..c {
            assert!((p[c + d] - p[c - d]).abs() < 1e-8);
        }
        assert!(p[c] >= p[c + 1]);
        // A flat ancilla spreads the outcome uniformly over the lattice.
        let p = outcome_density(&ground, &flat(g)).unwrap();
        assert!(p.iter().all(|&v| (v - p[0]).abs() < 1e-12));
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let g = GridSpec::default();
        let ground = GridState::ground(g);
        let ancilla = GridState::from_fn(g, |x| C64::new((-(x / 3.0).powi(2)).exp(), 0.0));
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| homodyne_sample(&ground, &ancilla, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn correction_zero_outcome_is_identity() {
        let gate = GateTerm::new(Quadrature::X, [(3, 0.1), (4, 0.2)]).unwrap();
        let c = correction_sequence(&gate, 0.0).unwrap();
        assert!(c.terms().iter().all(GateTerm::is_identity));
    }

    #[test]
    fn correction_coefficients() {
        let t = 1e-3;
        let b = 0.3;
        let cubic = correction_sequence(&GateTerm::new(Quadrature::X, [(3, t)]).unwrap(), b).unwrap();
        assert_eq!(cubic.terms()[0], GateTerm::new(Quadrature::P, [(1, 2.0 * b)]).unwrap());
        let d = &cubic.terms()[1];
        assert!((d.coeff(2) + 3.0 * t * b).abs() < 1e-18);
        assert!((d.coeff(1) + 3.0 * t * b * b).abs() < 1e-18);
        let quartic = correction_sequence(&GateTerm::new(Quadrature::X, [(4, t)]).unwrap(), b).unwrap();
        let d = &quartic.terms()[1];
        assert!((d.coeff(3) + 4.0 * t * b).abs() < 1e-18);
        assert!((d.coeff(2) + 6.0 * t * b * b).abs() < 1e-18);
        assert!((d.coeff(1) + 4.0 * t * b.powi(3)).abs() < 1e-18);
        assert!(correction_sequence(&GateTerm { basis: Quadrature::X, coeffs: [(5, 1.0)].into() }, b).is_err());
    }

    /// `A e^{2iβP} A†` against the expanded correction, as operators.
    #[test]
    fn correction_operator_identity() {
        let dim = 80;
        let k = 20;
        let (t, b) = (1e-3, 0.3);
        let compiler = FockCompiler::new(dim).unwrap();
        let q = quadrature_operators(dim).unwrap();
        for gate in [
            GateTerm::new(Quadrature::X, [(4, t)]).unwrap(),
            GateTerm::new(Quadrature::X, [(3, t)]).unwrap(),
            GateTerm::new(Quadrature::P, [(3, -t), (4, t)]).unwrap(),
        ] {
            let a = compiler.term_unitary(&gate);
            let shift = match gate.basis {
                Quadrature::X => crate::fock::unitary_from_generator(&q.p, 2.0 * b).unwrap(),
                Quadrature::P => crate::fock::unitary_from_generator(&q.x, -2.0 * b).unwrap(),
            };
            let expected = &(&a * &shift) * &a.adjoint();
            let got = compiler.compile(&correction_sequence(&gate, b).unwrap());
            // Compare up to the dropped global phase: log(got† expected) ∝ I.
            let ratio = &got.adjoint() * &expected;
            let block = ratio.interior_block(k);
            let phase = block[(0, 0)];
            let dev = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| {
                let target = if i == j { phase } else { C64::new(0.0, 0.0) };
                m.max((block[(i, j)] - target).norm())
            });
            assert!(dev < 1e-8, "{gate:?}: {dev}");
            assert!((phase.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn correction_restores_gate() {
        let g = GridSpec::default();
        let psi = coherent(&g);
        let t = 1e-2;
        let gate = GateTerm::new(Quadrature::X, [(3, t), (4, t)]).unwrap();
        let ancilla = GridState::from_fn(g, |x| C64::from_polar(1.0, t * x.powi(3) + t * x.powi(4))).normalized().unwrap();
        let target = apply_phase_polynomial(&fourier_gate(&psi, FourierDirection::Inverse).unwrap(), Quadrature::X, &gate.coeffs).unwrap();
        for beta in [0.3, -0.7, 1.1] {
            let (out, o) = teleport_step_detailed(&psi, &ancilla, beta).unwrap();
            let fixed = apply_correction(&out, &correction_sequence(&gate, o.beta).unwrap()).unwrap();
            assert!(fidelity_error(&fixed, &target).unwrap() < 1e-6, "β={beta}");
        }
        let pgate = GateTerm::new(Quadrature::P, [(3, t)]).unwrap();
        let target = apply_phase_polynomial(&fourier_gate(&psi, FourierDirection::Inverse).unwrap(), Quadrature::P, &pgate.coeffs).unwrap();
        let ancilla = GridState::from_fn(g, |x| C64::from_polar(1.0, t * x.powi(3))).normalized().unwrap();
        let (out, o) = teleport_step_p(&psi, &ancilla, 0.4).unwrap();
        let fixed = apply_correction(&out, &correction_sequence(&pgate, o.beta).unwrap()).unwrap();
        assert!(fidelity_error(&fixed, &target).unwrap() < 1e-6);
    }

    #[test]
    fn printed_primed_gates() {
        let t: f64 = 1e-3;
        let s = t.sqrt();
        let primed = fourier_modify(&kerr_first_order(t).unwrap());
        let expected = [
            GateTerm::new(Quadrature::P, [(3, 4.0 / 9.0 * s), (4, t)]).unwrap(),
            GateTerm::new(Quadrature::P, [(3, s), (4, t)]).unwrap(),
            GateTerm::new(Quadrature::P, [(3, 4.0 / 9.0 * s)]).unwrap(),
            GateTerm::new(Quadrature::P, [(3, s)]).unwrap(),
        ];
        for (got, want) in primed.terms().iter().zip(&expected) {
            assert_eq!(got.basis, want.basis);
            for k in [3, 4] {
                assert!((got.coeff(k) - want.coeff(k)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_term_unchanged_and_double_conjugation() {
        let term = GateTerm::new(Quadrature::X, [(3, 0.2)]).unwrap();
        let seq = GateSequence::new(vec![term.clone()]).unwrap();
        assert_eq!(fourier_modify(&seq), seq);
        assert_eq!(fourier_conjugate(&term, 2), GateTerm::new(Quadrature::X, [(3, -0.2)]).unwrap());
        assert_eq!(fourier_conjugate(&term, 4), term);
        assert_eq!(fourier_conjugate(&fourier_conjugate(&term, 1), -1), term);
    }

    #[test]
    fn conjugation_matches_grid() {
        let g = GridSpec::default();
        let psi = coherent(&g);
        let term = GateTerm::new(Quadrature::X, [(3, 0.05), (2, 0.1), (1, -0.2)]).unwrap();
        for k in 1..4 {
            // F^{−k} G F^{k} ψ on both sides.
            let lhs = fourier_power(
                &apply_phase_polynomial(&fourier_power(&psi, k).unwrap(), term.basis, &term.coeffs).unwrap(),
                -k,
            )
            .unwrap();
            let c = fourier_conjugate(&term, k);
            let rhs = apply_phase_polynomial(&psi, c.basis, &c.coeffs).unwrap();
            assert!(fidelity_error(&lhs, &rhs).unwrap() < 1e-10, "k={k}");
        }
    }
}
