//! Ancilla wavefunctions for phase-gate teleportation.
//!
//! Three recipes for an ancilla carrying the phase `φ(x)`:
//! the ideal profile `e^{iφ(x)}`, its first-order expansion `1 + iφ(x)` on a
//! wide Gaussian, and a photon-subtraction construction
//! `∏_k (X + iP + c_k)` applied to the same Gaussian.
//!
//! The Gaussian `e^{−(x/w)²}`, `w = e^r/√2`, stands in for the zero-momentum
//! eigenstate that a strongly squeezed vacuum approximates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::C64;
use crate::grid::{fourier_unchecked, polynomial_value, FourierDirection, GridSpec, GridState};

pub const DEFAULT_SQUEEZING: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AncillaKind {
    Ideal,
    FirstOrder,
    PhotonSubtracted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaSpec {
    pub kind: AncillaKind,
    /// `φ(x) = Σ c_k x^k`.
    pub phase: BTreeMap<u32, f64>,
    /// Squeezing parameter `r` of the Gaussian proxy (unused for `Ideal`).
    pub squeezing_r: Option<f64>,
    /// Displacement coefficients (photon subtraction only).
    pub roots: Vec<C64>,
}

fn check_phase(phase: &BTreeMap<u32, f64>) -> Result<()> {
    for (&k, &c) in phase {
        if !(1..=4).contains(&k) || !c.is_finite() {
            return Err(invalid(format!("ancilla phase term {c}·x^{k} is not allowed")));
        }
    }
    Ok(())
}

fn check_r(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        return Err(invalid(format!("squeezing parameter must be positive, got {r}")));
    }
    Ok(())
}

fn phase_degree(phase: &BTreeMap<u32, f64>) -> usize {
    phase.iter().filter(|(_, &c)| c != 0.0).map(|(&k, _)| k as usize).max().unwrap_or(0)
}

impl AncillaSpec {
    pub fn ideal(phase: BTreeMap<u32, f64>) -> Result<Self> {
        check_phase(&phase)?;
        Ok(Self { kind: AncillaKind::Ideal, phase, squeezing_r: None, roots: Vec::new() })
    }

    /// Ideal ancilla for `e^{i t₃x³ + i t₄x⁴}`.
    pub fn cubic_quartic(t3: f64, t4: f64) -> Result<Self> {
        Self::ideal(BTreeMap::from([(3, t3), (4, t4)]).into_iter().filter(|(_, c)| *c != 0.0).collect())
    }

    pub fn first_order(phase: BTreeMap<u32, f64>, r: f64) -> Result<Self> {
        check_phase(&phase)?;
        check_r(r)?;
        Ok(Self { kind: AncillaKind::FirstOrder, phase, squeezing_r: Some(r), roots: Vec::new() })
    }

    /// Solves for the displacement coefficients that reproduce `1 + iφ(x)`.
    pub fn photon_subtracted(phase: BTreeMap<u32, f64>, r: f64) -> Result<Self> {
        check_phase(&phase)?;
        check_r(r)?;
        let degree = phase_degree(&phase);
        let mut target = vec![C64::new(0.0, 0.0); degree + 1];
        target[0] = C64::new(1.0, 0.0);
        for (&k, &c) in &phase {
            target[k as usize] += C64::new(0.0, c);
        }
        let roots = if degree == 0 { Vec::new() } else { photon_subtraction_roots(&target)? };
        Ok(Self { kind: AncillaKind::PhotonSubtracted, phase, squeezing_r: Some(r), roots })
    }

    pub fn validate(&self) -> Result<()> {
        check_phase(&self.phase)?;
        match self.kind {
            AncillaKind::Ideal => Ok(()),
            AncillaKind::FirstOrder => check_r(self.squeezing_r.ok_or_else(|| invalid("missing squeezing"))?),
            AncillaKind::PhotonSubtracted => {
                check_r(self.squeezing_r.ok_or_else(|| invalid("missing squeezing"))?)?;
                if self.roots.len() != phase_degree(&self.phase) {
                    return Err(invalid(format!(
                        "{} roots for a degree-{} phase",
                        self.roots.len(),
                        phase_degree(&self.phase)
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Width of the squeezing proxy, `w = e^r/√2`.
pub fn proxy_width(r: f64) -> f64 {
    r.exp() / std::f64::consts::SQRT_2
}

/// Normalized `e^{−(x/w)²}`.
pub fn squeezing_proxy(r: f64, g: &GridSpec) -> Result<GridState> {
    check_r(r)?;
    let w = proxy_width(r);
    GridState::from_fn(*g, |x| C64::new((-(x / w).powi(2)).exp(), 0.0)).normalized()
}

pub fn make_ancilla(spec: &AncillaSpec, g: &GridSpec) -> Result<GridState> {
    spec.validate()?;
    match spec.kind {
        AncillaKind::Ideal => {
            // Not normalizable in the continuum; windowed to the lattice.
            GridState::from_fn(*g, |x| C64::from_polar(1.0, polynomial_value(&spec.phase, x))).normalized()
        }
        AncillaKind::FirstOrder => {
            let r = spec.squeezing_r.unwrap_or(DEFAULT_SQUEEZING);
            let proxy = squeezing_proxy(r, g)?;
            proxy.multiply(|x| C64::new(1.0, polynomial_value(&spec.phase, x))).normalized()
        }
        AncillaKind::PhotonSubtracted => {
            // Closed form of the operator product; the spectral route wraps
            // around the lattice once the profile reaches the edges.
            let r = spec.squeezing_r.unwrap_or(DEFAULT_SQUEEZING);
            let q = photon_subtracted_profile(&spec.roots, r)?;
            let w = proxy_width(r);
            GridState::from_fn(*g, |x| {
                q.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c) * (-(x / w).powi(2)).exp()
            })
            .normalized()
        }
    }
}

/// `∏_k (X + iP + c_k)` on the squeezing proxy, `P` applied spectrally.
pub fn photon_subtracted_ancilla(roots: &[C64], r: f64, g: &GridSpec) -> Result<GridState> {
    let mut state = squeezing_proxy(r, g)?;
    for &c in roots {
        let x_part = state.multiply(|x| C64::new(x, 0.0) + c);
        // The proxy is wide in position, so the edge guard does not apply.
        let k = fourier_unchecked(&state, FourierDirection::Inverse);
        let p_part = fourier_unchecked(&k.multiply(|x| C64::new(x, 0.0)), FourierDirection::Forward);
        let values = x_part.values().iter().zip(p_part.values()).map(|(a, b)| a + C64::new(0.0, 1.0) * b).collect();
        state = GridState::new(*g, values)?;
    }
    state.normalized()
}

/// Polynomial part `q(x)` (ascending coefficients) of
/// `∏_k (X + iP + c_k) e^{−(x/w)²} = q(x) e^{−(x/w)²}`, scaled so `q(0) = 1`
/// when possible. Uses `a (p g) = (κ x p + ½ p′) g`, `κ = 1 − 1/w²`.
pub fn photon_subtracted_profile(roots: &[C64], r: f64) -> Result<Vec<C64>> {
    check_r(r)?;
    let w = proxy_width(r);
    let kappa = 1.0 - 1.0 / (w * w);
    let mut q = vec![C64::new(1.0, 0.0)];
    for &c in roots {
        let mut next = vec![C64::new(0.0, 0.0); q.len() + 1];
        for (k, &v) in q.iter().enumerate() {
            next[k + 1] += v * kappa;
            next[k] += v * c;
            if k > 0 {
                next[k - 1] += v * (0.5 * k as f64);
            }
        }
        q = next;
    }
    if q[0].norm() > 0.0 {
        let s = q[0];
        q.iter_mut().for_each(|v| *v /= s);
    }
    Ok(q)
}

/// Coefficients (ascending powers of `x`) of `p_m = a^m · 1`, where
/// `a = X + iP = x + ½ d/dx` acts on the constant wavefunction.
pub fn ladder_polynomials(max_order: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0]];
    for m in 0..max_order {
        let prev = &out[m];
        let mut next = vec![0.0; prev.len() + 1];
        for (k, &c) in prev.iter().enumerate() {
            next[k + 1] += c;
            if k > 0 {
                next[k - 1] += 0.5 * k as f64 * c;
            }
        }
        out.push(next);
    }
    out
}

/// Expands `∏_k (X + iP + c_k)` acting on the constant wavefunction, as
/// ascending coefficients of `x`.
pub fn expand_photon_subtraction(roots: &[C64]) -> Vec<C64> {
    let n = roots.len();
    let p = ladder_polynomials(n);
    let e = elementary_symmetric(roots);
    let mut out = vec![C64::new(0.0, 0.0); n + 1];
    for (k, ek) in e.iter().enumerate() {
        for (j, &c) in p[n - k].iter().enumerate() {
            out[j] += ek * c;
        }
    }
    out
}

/// `e_0 = 1, e_1 = Σ c_k, e_2 = Σ_{j<k} c_j c_k, …`.
pub fn elementary_symmetric(roots: &[C64]) -> Vec<C64> {
    let mut e = vec![C64::new(0.0, 0.0); roots.len() + 1];
    e[0] = C64::new(1.0, 0.0);
    for (m, &c) in roots.iter().enumerate() {
        for k in (1..=m + 1).rev() {
            let prev = e[k - 1];
            e[k] += prev * c;
        }
    }
    e
}

/// Displacement coefficients `c_k` with `∏_k (X + iP + c_k)·1 ∝ target(x)`,
/// `target` given as ascending coefficients with a nonzero leading term.
pub fn photon_subtraction_roots(target: &[C64]) -> Result<Vec<C64>> {
    let n = target.len().saturating_sub(1);
    if n == 0 || target[n] == C64::new(0.0, 0.0) {
        return Err(invalid("target polynomial needs a nonzero leading coefficient"));
    }
    if target.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(invalid("target polynomial has non-finite coefficients"));
    }
    let lead = target[n];
    let monic: Vec<C64> = target.iter().map(|c| c / lead).collect();
    let p = ladder_polynomials(n);
    // Coefficient of x^{n−k}: e_k + Σ_{j<k} e_j [x^{n−k}] p_{n−j} = monic[n−k].
    let mut e = vec![C64::new(0.0, 0.0); n + 1];
    e[0] = C64::new(1.0, 0.0);
    for k in 1..=n {
        let power = n - k;
        let mut acc = monic[power];
        for j in 0..k {
            if let Some(&c) = p[n - j].get(power) {
                acc -= e[j] * c;
            }
        }
        e[k] = acc;
    }
    // ∏(z − c_k) = Σ_k (−1)^k e_k z^{n−k}
    let poly: Vec<C64> = (0..=n).map(|k| if k % 2 == 0 { e[k] } else { -e[k] }).collect();
    let mut roots = polynomial_roots(&poly)?;
    sort_roots(&mut roots);
    Ok(roots)
}

/// Roots of the order-3 (cubic) or order-4 (quartic) construction for
/// `1 + i t x^order`.
pub fn solve_displacement_roots(t: f64, order: usize) -> Result<Vec<C64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid(format!("amplitude must be positive, got {t}")));
    }
    if order != 3 && order != 4 {
        return Err(invalid(format!("order must be 3 or 4, got {order}")));
    }
    let mut target = vec![C64::new(0.0, 0.0); order + 1];
    target[0] = C64::new(1.0, 0.0);
    target[order] = C64::new(0.0, t);
    photon_subtraction_roots(&target)
}

/// Residuals of the printed cubic conditions `c₁+c₂+c₃ = 0`,
/// `c₁c₂+c₂c₃+c₁c₃ + 3/2 = 0`, `i t c₁c₂c₃ − 1 = 0`.
pub fn cubic_condition_residuals(roots: &[C64], t: f64) -> Result<[f64; 3]> {
    if roots.len() != 3 {
        return Err(invalid("cubic conditions need three roots"));
    }
    let e = elementary_symmetric(roots);
    Ok([e[1].norm(), (e[2] + 1.5).norm(), (C64::new(0.0, t) * e[3] - 1.0).norm()])
}

/// Sort by imaginary part, then real part.
pub fn sort_roots(roots: &mut [C64]) {
    roots.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
}

fn horner(coeffs_desc: &[C64], z: C64) -> (C64, C64) {
    let mut p = C64::new(0.0, 0.0);
    let mut dp = C64::new(0.0, 0.0);
    for &c in coeffs_desc {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of `Σ a_k z^{n−k}` (descending coefficients, `a_0 ≠ 0`) by
/// simultaneous Durand–Kerner iteration followed by Newton polishing.
pub fn polynomial_roots(coeffs_desc: &[C64]) -> Result<Vec<C64>> {
    let n = coeffs_desc.len().saturating_sub(1);
    if n == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs_desc[0];
    if lead == C64::new(0.0, 0.0) {
        return Err(invalid("leading coefficient vanishes"));
    }
    let monic: Vec<C64> = coeffs_desc.iter().map(|c| c / lead).collect();
    let radius = 1.0 + monic[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let seed = C64::new(0.4, 0.9);
    let mut z: Vec<C64> = (0..n).map(|k| seed.powu(k as u32) * radius / seed.norm().powi(k as i32)).collect();
    let mut converged = false;
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let (p, _) = horner(&monic, z[i]);
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            if denom == C64::new(0.0, 0.0) {
                denom = C64::new(1e-300, 0.0);
            }
            let step = p / denom;
            z[i] -= step;
            delta = delta.max(step.norm() / (1.0 + z[i].norm()));
        }
        if delta < 1e-15 {
            converged = true;
            break;
        }
    }
    if !converged && z.iter().any(|r| horner(&monic, *r).0.norm() > 1e-8 * radius.powi(n as i32)) {
        return Err(Error::NumericalFailure("root iteration did not converge".into()));
    }
    for r in &mut z {
        for _ in 0..3 {
            let (p, dp) = horner(&monic, *r);
            if dp.norm() == 0.0 {
                break;
            }
            *r -= p / dp;
        }
    }
    if z.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
        return Err(Error::NumericalFailure("root iteration diverged".into()));
    }
    Ok(z)
}
