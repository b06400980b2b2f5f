//! Position-representation wavefunctions on a uniform self-dual lattice.
//!
//! The lattice `x_j = (j − N/2)·Δx` with `N·Δx² = π` maps onto itself under
//! the kernel `e^{2ixy}/√π`, which makes the discrete Fourier gate exactly
//! unitary with `F⁴ = I`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::decomposition::Quadrature;
use crate::error::{invalid, Error, Result};
use crate::fock::{FockState, StateVector, C64};

/// Fraction of the window on each side counted as boundary.
pub const BOUNDARY_FRACTION: f64 = 0.05;
/// Boundary-mass tolerance for trusted states.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;
/// Boundary mass that triggers the aliasing guard after a Fourier transform.
pub const ALIASING_THRESHOLD: f64 = 1e-6;
/// Default number of lattice points.
pub const DEFAULT_POINTS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub dx: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::self_dual(DEFAULT_POINTS).expect("default lattice is valid")
    }
}

/// Result of fitting a requested window onto a self-dual lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAdjustment {
    pub requested_x_min: f64,
    pub requested_x_max: f64,
    pub spec: GridSpec,
    pub adjusted: bool,
}

impl GridSpec {
    /// Self-dual lattice with `n_points` samples, `Δx = √(π/N)`.
    pub fn self_dual(n_points: usize) -> Result<Self> {
        if n_points < 256 || !n_points.is_power_of_two() {
            return Err(invalid(format!(
                "grid needs a power-of-two point count of at least 256, got {n_points}"
            )));
        }
        Ok(Self { n_points, dx: (PI / n_points as f64).sqrt() })
    }

    /// Keeps the point count of a requested `[x_min, x_max)` window and
    /// replaces its spacing with the self-dual one.
    pub fn from_window(x_min: f64, x_max: f64, n_points: usize) -> Result<GridAdjustment> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(invalid(format!("empty grid window [{x_min}, {x_max})")));
        }
        let spec = Self::self_dual(n_points)?;
        let adjusted = (spec.x_min() - x_min).abs() > 1e-12 || (spec.x_max() - x_max).abs() > 1e-12;
        Ok(GridAdjustment { requested_x_min: x_min, requested_x_max: x_max, spec, adjusted })
    }

    pub fn x_min(&self) -> f64 {
        -(self.n_points as f64) / 2.0 * self.dx
    }

    /// Exclusive upper edge.
    pub fn x_max(&self) -> f64 {
        (self.n_points as f64) / 2.0 * self.dx
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - (self.n_points / 2) as f64) * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Index of `x = 0`.
    pub fn center(&self) -> usize {
        self.n_points / 2
    }

    fn boundary_points(&self) -> usize {
        ((self.n_points as f64) * BOUNDARY_FRACTION).ceil() as usize
    }
}

/// Samples `ψ(x_j)` on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    spec: GridSpec,
    values: Vec<C64>,
}

impl GridState {
    pub fn new(spec: GridSpec, values: Vec<C64>) -> Result<Self> {
        if values.len() != spec.n_points {
            return Err(invalid(format!(
                "expected {} samples, got {}",
                spec.n_points,
                values.len()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(invalid("grid state has non-finite samples"));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64) -> C64) -> Self {
        let values = (0..spec.n_points).map(|j| f(spec.x(j))).collect();
        Self { spec, values }
    }

    /// Oscillator ground state `(2/π)^{1/4} e^{−x²}`.
    pub fn ground(spec: GridSpec) -> Self {
        let norm = (2.0 / PI).powf(0.25);
        Self::from_fn(spec, |x| C64::new(norm * (-x * x).exp(), 0.0))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NumericalFailure("cannot normalize a null grid state".into()));
        }
        for v in &mut self.values {
            *v /= n;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `|ψ|²` summed over the outer 5% of the window on each side.
    pub fn boundary_mass(&self) -> f64 {
        let b = self.spec.boundary_points();
        let n = self.values.len();
        let edge: f64 = self.values[..b].iter().chain(&self.values[n - b..]).map(|z| z.norm_sqr()).sum();
        edge * self.spec.dx
    }

    /// Pointwise product with a function of `x`.
    pub fn multiply(&self, f: impl Fn(f64) -> C64) -> Self {
        let values =
            self.values.iter().enumerate().map(|(j, v)| v * f(self.spec.x(j))).collect();
        Self { spec: self.spec, values }
    }

    /// `ψ(x) → ψ(x − m·Δx)` with periodic wrap-around.
    pub fn shift(&self, m: i64) -> Self {
        let n = self.values.len() as i64;
        let values = (0..n).map(|j| self.values[(j - m).rem_euclid(n) as usize]).collect();
        Self { spec: self.spec, values }
    }

    /// `ψ(x) → ψ(−x)` on the lattice (`x_0 = −x_max` has no partner and
    /// maps to itself).
    pub fn parity(&self) -> Self {
        let n = self.values.len();
        let values = (0..n).map(|j| self.values[(n - j) % n]).collect();
        Self { spec: self.spec, values }
    }

    /// Writes `x, re, im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "re", "im"])?;
        for (j, v) in self.values.iter().enumerate() {
            w.serialize((self.spec.x(j), v.re, v.im))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl StateVector for GridState {
    fn inner(&self, other: &Self) -> Result<C64> {
        if self.spec != other.spec {
            return Err(invalid("grid states live on different lattices"));
        }
        let s: C64 = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.spec.dx)
    }

    fn inner_self(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.spec.dx
    }
}

/// Oscillator eigenfunctions `u_0 … u_{n_max}` evaluated at `xs`; row `n`
/// holds `u_n`. The recurrence `u_{n+1} = (2x u_n − √n u_{n−1})/√(n+1)`
/// runs on rescaled values so neither factor under- nor overflows.
pub fn hermite_functions(n_max: usize, xs: &[f64]) -> Vec<Vec<f64>> {
    let mut rows = vec![vec![0.0; xs.len()]; n_max + 1];
    let log_u0_norm = (2.0 / PI).ln() / 4.0;
    for (j, &x) in xs.iter().enumerate() {
        let mut log_scale = log_u0_norm - x * x;
        let (mut prev, mut cur) = (0.0f64, 1.0f64);
        rows[0][j] = log_scale.exp();
        for n in 0..n_max {
            let next = (2.0 * x * cur - (n as f64).sqrt() * prev) / ((n + 1) as f64).sqrt();
            prev = cur;
            cur = next;
            let mag = cur.abs();
            if mag > 1e100 {
                prev /= mag;
                cur /= mag;
                log_scale += mag.ln();
            }
            rows[n + 1][j] = if cur == 0.0 { 0.0 } else { cur.signum() * (cur.abs().ln() + log_scale).exp() };
        }
    }
    rows
}

/// `ψ(x) = Σ c_n u_n(x)`, normalized on the lattice.
pub fn fock_to_position(s: &FockState, g: &GridSpec) -> Result<GridState> {
    let xs = g.xs();
    let u = hermite_functions(s.dim() - 1, &xs);
    let mut values = vec![C64::new(0.0, 0.0); g.n_points];
    for (n, row) in u.iter().enumerate() {
        let c = s.coeff(n);
        if c == C64::new(0.0, 0.0) {
            continue;
        }
        for (v, &un) in values.iter_mut().zip(row) {
            *v += c * un;
        }
    }
    let mut out = GridState { spec: *g, values };
    out.normalize()?;
    let mass = out.boundary_mass();
    if mass > BOUNDARY_TOLERANCE {
        return Err(Error::Domain(format!(
            "grid window [{:.3}, {:.3}) too small: boundary mass {mass:.3e}",
            g.x_min(),
            g.x_max()
        )));
    }
    Ok(out)
}

/// Number-basis amplitudes `c_n = Σ_j u_n(x_j) ψ(x_j) Δx`, renormalized.
pub fn position_to_fock(s: &GridState, dim: usize) -> Result<FockState> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let xs = s.spec.xs();
    let u = hermite_functions(dim - 1, &xs);
    let coeffs: Vec<C64> = u
        .iter()
        .map(|row| row.iter().zip(&s.values).map(|(&un, v)| v * un).sum::<C64>() * s.spec.dx)
        .collect();
    let norm = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm < 0.999 {
        return Err(Error::Truncation { norm, threshold: 0.999 });
    }
    FockState::from_coeffs(coeffs)?.normalized()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FourierDirection {
    /// `F`, kernel `e^{2ixy}/√π`.
    Forward,
    /// `F†`.
    Inverse,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Lattice Fourier gate without the aliasing guard. `F_jk =
/// (−1)^{j+k} e^{2πijk/N}/√N`, which equals the continuum kernel sampled on
/// the self-dual lattice (the constant phase `e^{iπN/2}` is 1 for `4 | N`).
pub fn fourier_unchecked(s: &GridState, direction: FourierDirection) -> GridState {
    let n = s.values.len();
    let mut buf: Vec<Complex64> = s
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| if k % 2 == 1 { -v } else { *v })
        .collect();
    let dir = match direction {
        FourierDirection::Forward => FftDirection::Inverse,
        FourierDirection::Inverse => FftDirection::Forward,
    };
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(n, dir));
    fft.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    for (j, v) in buf.iter_mut().enumerate() {
        *v *= if j % 2 == 1 { -scale } else { scale };
    }
    GridState { spec: s.spec, values: buf }
}

/// Lattice Fourier gate with the aliasing guard on the output.
pub fn fourier_gate(s: &GridState, direction: FourierDirection) -> Result<GridState> {
    let out = fourier_unchecked(s, direction);
    let mass = out.boundary_mass();
    if mass > ALIASING_THRESHOLD {
        return Err(Error::Aliasing { mass, threshold: ALIASING_THRESHOLD });
    }
    Ok(out)
}

fn check_powers(coeffs: &BTreeMap<u32, f64>) -> Result<()> {
    for (&k, &c) in coeffs {
        if !(1..=4).contains(&k) {
            return Err(invalid(format!("phase power {k} outside 1..=4")));
        }
        if !c.is_finite() {
            return Err(invalid(format!("non-finite coefficient for power {k}")));
        }
    }
    Ok(())
}

/// `Σ c_k x^k`.
pub fn polynomial_value(coeffs: &BTreeMap<u32, f64>, x: f64) -> f64 {
    coeffs.iter().map(|(&k, &c)| c * x.powi(k as i32)).sum()
}

/// `exp(i Σ c_k Q^k)` on a grid state. `P`-polynomials use
/// `f(P) = F f(X) F†`.
pub fn apply_phase_polynomial(
    s: &GridState,
    basis: Quadrature,
    coeffs: &BTreeMap<u32, f64>,
) -> Result<GridState> {
    check_powers(coeffs)?;
    if coeffs.values().all(|&c| c == 0.0) {
        return Ok(s.clone());
    }
    let phase = |x: f64| C64::from_polar(1.0, polynomial_value(coeffs, x));
    match basis {
        Quadrature::X => Ok(s.multiply(phase)),
        Quadrature::P => {
            let k = fourier_gate(s, FourierDirection::Inverse)?;
            fourier_gate(&k.multiply(phase), FourierDirection::Forward)
        }
    }
}
