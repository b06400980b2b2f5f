//! Numerical checks of the composition rules: order conditions, the
//! logarithm of the four-gate product, and log-residual scaling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{q2_scaled, third_order_scaled, FockCompiler, GateSequence, GateTerm, Q2Variant, Quadrature, SchemeKind};
use crate::error::{invalid, Error, Result};
use crate::fock::{
    kerr_target_unitary, quadrature_operators, spectral_norm, unitary_from_generator, unitary_log, CMatrix,
    FockOperator, C64,
};

/// Absolute residuals of the four third-order conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderResiduals {
    /// `|c₁ + c₂ + c₃ + c₄ − 1|`
    pub sum: f64,
    /// `|c₁² − c₂² + c₃² − c₄² − 1|`
    pub alternating_squares: f64,
    /// `|c₁³ + c₂³ + c₃³ + c₄³|`
    pub cubes: f64,
    /// Cross terms between the first- and second-order parts.
    pub cross: f64,
}

impl OrderResiduals {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sum, self.alternating_squares, self.cubes, self.cross]
    }

    pub fn max(&self) -> f64 {
        self.as_array().into_iter().fold(0.0, f64::max)
    }
}

pub fn verify_order_conditions(c: [f64; 4]) -> OrderResiduals {
    let [c1, c2, c3, c4] = c;
    let cross = c1 * c1 * c2 + c1 * c2 * c2 + c1 * c1 * c3 - c2 * c2 * c3 - c1 * c3 * c3 - c2 * c3 * c3
        + c1 * c1 * c4
        - c2 * c2 * c4
        + c3 * c3 * c4
        + c1 * c4 * c4
        + c2 * c4 * c4
        + c3 * c4 * c4;
    OrderResiduals {
        sum: (c1 + c2 + c3 + c4 - 1.0).abs(),
        alternating_squares: (c1 * c1 - c2 * c2 + c3 * c3 - c4 * c4 - 1.0).abs(),
        cubes: (c1.powi(3) + c2.powi(3) + c3.powi(3) + c4.powi(3)).abs(),
        cross: cross.abs(),
    }
}

/// Coefficients of `log U` along `iX³, iP³, iX⁴, iP⁴, [X³, P³]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogExpansion {
    pub predicted: [f64; 5],
    pub fitted: [f64; 5],
    pub residuals: [f64; 5],
}

impl LogExpansion {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// `e^{i p₁√t P³ + i p₂ t P⁴} e^{i p₃√t X³ + i p₄ t X⁴} e^{i p₅√t P³ + i p₆ t P⁴}
/// e^{i p₇√t X³ + i p₈ t X⁴}` as a sequence.
pub fn four_gate_product(p: [f64; 8], t: f64) -> GateSequence {
    let s = t.sqrt();
    let gate = |basis, c3: f64, c4: f64| GateTerm { basis, coeffs: [(3, c3 * s), (4, c4 * t)].into_iter().collect() };
    GateSequence {
        terms: vec![
            gate(Quadrature::X, p[6], p[7]),
            gate(Quadrature::P, p[4], p[5]),
            gate(Quadrature::X, p[2], p[3]),
            gate(Quadrature::P, p[0], p[1]),
        ],
    }
}

/// Predicted log coefficients of [`four_gate_product`] up to `O(t^{3/2})`.
pub fn predicted_log_coefficients(p: [f64; 8], t: f64) -> [f64; 5] {
    let s = t.sqrt();
    [
        (p[2] + p[6]) * s,
        (p[0] + p[4]) * s,
        (p[3] + p[7]) * t,
        (p[1] + p[5]) * t,
        0.5 * (p[0] * p[2] - p[2] * p[4] + p[0] * p[6] + p[4] * p[6]) * t,
    ]
}

fn flatten_block(m: &CMatrix) -> Vec<f64> {
    m.iter().map(|z| z.re).chain(m.iter().map(|z| z.im)).collect()
}

/// Real least-squares coordinates of `target` along `directions` on the
/// interior block. Returns `NumericalFailure` when the directions are
/// numerically dependent there.
pub fn project_onto(target: &CMatrix, directions: &[CMatrix]) -> Result<Vec<f64>> {
    let rows = 2 * target.len();
    let mut a = DMatrix::<f64>::zeros(rows, directions.len());
    for (j, d) in directions.iter().enumerate() {
        if d.shape() != target.shape() {
            return Err(invalid("projection directions must match the target block"));
        }
        for (i, v) in flatten_block(d).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let b = DMatrix::from_column_slice(rows, 1, &flatten_block(target));
    let svd = a.svd(true, true);
    let (hi, lo) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(h, l), &s| (h.max(s), l.min(s)));
    if !(lo > 1e-12 * hi) {
        return Err(Error::NumericalFailure(format!(
            "operator directions are ill-conditioned on the interior block (σ_min/σ_max = {:.2e}); enlarge dim",
            lo / hi
        )));
    }
    let x = svd.solve(&b, 0.0).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// Fits the logarithm of [`four_gate_product`] on the interior block
/// `|0⟩ … |dim/4⟩` and compares with the predicted coefficients. The fit
/// includes an identity direction that is discarded.
pub fn verify_log_expansion(p: [f64; 8], t: f64, dim: usize) -> Result<LogExpansion> {
    if !(t > 0.0 && t <= 1e-2) {
        return Err(invalid(format!("log expansion needs 0 < t ≤ 1e-2, got {t}")));
    }
    let predicted = predicted_log_coefficients(p, t);
    let compiler = FockCompiler::new(dim)?;
    let u = compiler.compile(&four_gate_product(p, t));
    let log = unitary_log(&u)?;
    let q = quadrature_operators(dim)?;
    let k = (dim / 4).max(4).min(dim - 1);
    let i = C64::new(0.0, 1.0);
    let x3 = q.x.pow(3);
    let p3 = q.p.pow(3);
    let directions: Vec<CMatrix> = [
        x3.scale(i),
        p3.scale(i),
        q.x.pow(4).scale(i),
        q.p.pow(4).scale(i),
        x3.commutator(&p3),
        FockOperator::identity(dim).scale(i),
    ]
    .iter()
    .map(|op| op.interior_block(k))
    .collect();
    let coords = project_onto(&log.interior_block(k), &directions)?;
    let mut fitted = [0.0; 5];
    fitted.copy_from_slice(&coords[..5]);
    let residuals = std::array::from_fn(|j| (fitted[j] - predicted[j]).abs());
    Ok(LogExpansion { predicted, fitted, residuals })
}

/// `‖Π_k log(U V†) Π_k‖`, zero when `U = V`.
pub fn log_residual(u: &FockOperator, v: &FockOperator, k: usize) -> Result<f64> {
    let l = unitary_log(&(u * &v.adjoint()))?;
    Ok(spectral_norm(&l.interior_block(k)))
}

/// Log-residuals at several amplitudes and the least-squares log-log slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub ts: Vec<f64>,
    pub residuals: Vec<f64>,
    pub slope: f64,
}

pub fn fit_log_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let lx: Vec<f64> = ts.iter().map(|t| t.log10()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.log10()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Interior block used for scaling fits: the top of a truncated quartic
/// phase wraps long before `dim − dim/4`, so the fit stays at `dim/6`.
pub fn scaling_interior(dim: usize) -> usize {
    (dim / 6).max(2)
}

/// Log-residual of one scheme repetition against the Kerr target.
pub fn bch_scaling(kind: SchemeKind, ts: &[f64], dim: usize) -> Result<ScalingFit> {
    let compiler = FockCompiler::new(dim)?;
    let k = scaling_interior(dim);
    let mut residuals = Vec::with_capacity(ts.len());
    for &t in ts {
        let scheme = super::CompositionScheme::new(kind, t, 1)?;
        let u = compiler.compile(&scheme.base_sequence()?);
        residuals.push(log_residual(&u, &kerr_target_unitary(t, dim)?, k)?);
    }
    let slope = fit_log_slope(ts, &residuals);
    Ok(ScalingFit { ts: ts.to_vec(), residuals, slope })
}

/// The same fit for the compositions without the `1/√t` cubic rescaling,
/// measured against `exp(it(X⁴ + P⁴) + (4/9)t²[X³, P³])`.
pub fn bch_scaling_unscaled(kind: SchemeKind, ts: &[f64], dim: usize) -> Result<ScalingFit> {
    let compiler = FockCompiler::new(dim)?;
    let q = quadrature_operators(dim)?;
    let quartic = &q.x.pow(4) + &q.p.pow(4);
    let comm = q.x.pow(3).commutator(&q.p.pow(3));
    let k = scaling_interior(dim);
    let mut residuals = Vec::with_capacity(ts.len());
    for &t in ts {
        let seq = match kind {
            SchemeKind::Q2 => q2_scaled(t, 1.0, Q2Variant::Q2),
            SchemeKind::ThirdOrder => third_order_scaled(t, 1.0),
            other => return Err(invalid(format!("no unscaled form for {other:?}"))),
        };
        // −iG = t(X⁴ + P⁴) − i(4/9)t²[X³, P³]
        let h = &quartic.scale(C64::new(t, 0.0)) + &comm.scale(C64::new(0.0, -4.0 / 9.0 * t * t));
        let target = unitary_from_generator(&h, 1.0)?;
        residuals.push(log_residual(&compiler.compile(&seq), &target, k)?);
    }
    let slope = fit_log_slope(ts, &residuals);
    Ok(ScalingFit { ts: ts.to_vec(), residuals, slope })
}
