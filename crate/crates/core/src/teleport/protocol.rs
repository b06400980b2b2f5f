//! Protocol runs: direct application, postselected teleportation chains and
//! deterministic chains with correction teleportations.
//!
//! The physical state is tracked as `F^q` times the logical state. A
//! teleportation step applies `F†`, so the gate actually teleported is the
//! logical gate conjugated by `F^{1−q}`. Displacements (linear phases) are
//! applied directly; higher correction terms move to the logical frame and
//! either merge into the next same-basis gate or get their own step.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    correction_sequence, fourier_conjugate, fourier_power, outcome_density, outcome_density_p, sample_outcome,
    snap_outcome, teleport_step_detailed, teleport_step_p, window_probability, LatticeOutcome,
};
use crate::ancilla::{make_ancilla, AncillaKind, AncillaSpec};
use crate::decomposition::{apply_sequence, CompositionScheme, GateSequence, GateTerm, Quadrature};
use crate::error::{invalid, Error, Result};
use crate::fock::FockState;
use crate::grid::{apply_phase_polynomial, fock_to_position, GridSpec, GridState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    /// Apply the sequence with no measurements.
    Direct,
    /// Accept outcomes with `|β| ≤ ε_w`, apply no corrections.
    #[default]
    Postselect,
    /// Accept every outcome and teleport the corrections.
    Deterministic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomePolicy {
    #[default]
    Sample,
    /// Every measurement returns this value (snapped to the lattice).
    Forced { beta: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AncillaModel {
    #[default]
    Ideal,
    FirstOrder { squeezing_r: f64 },
    PhotonSubtracted { squeezing_r: f64 },
}

/// How the `F†` left by each teleportation is discharged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourierStrategy {
    /// Primed gates, then flat-ancilla steps until the power is 0 mod 4.
    #[default]
    ClosingFlats,
    /// Apply `F^{n mod 4}` to the input before the chain.
    PreApplied,
    /// Leave the residual power on the output.
    Residual,
}

fn default_window() -> f64 {
    0.05
}

fn default_retries() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    #[serde(default)]
    pub mode: ProtocolMode,
    #[serde(default = "default_window")]
    pub postselect_window: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Generator stream, so independent runs can share one seed.
    #[serde(default)]
    pub rng_stream: u64,
    #[serde(default)]
    pub outcome: OutcomePolicy,
    #[serde(default)]
    pub ancilla: AncillaModel,
    #[serde(default)]
    pub fourier: FourierStrategy,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: ProtocolMode::default(),
            postselect_window: default_window(),
            max_retries: default_retries(),
            rng_seed: 0,
            rng_stream: 0,
            outcome: OutcomePolicy::default(),
            ancilla: AncillaModel::default(),
            fourier: FourierStrategy::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn forced(mode: ProtocolMode, beta: f64) -> Self {
        Self { mode, outcome: OutcomePolicy::Forced { beta }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ProtocolMode::Postselect && !(self.postselect_window > 0.0) {
            return Err(invalid("postselection window must be positive"));
        }
        if self.max_retries < 1 {
            return Err(invalid("max_retries must be at least 1"));
        }
        if let OutcomePolicy::Forced { beta } = self.outcome {
            if !beta.is_finite() {
                return Err(invalid("forced outcome must be finite"));
            }
        }
        match self.ancilla {
            AncillaModel::FirstOrder { squeezing_r } | AncillaModel::PhotonSubtracted { squeezing_r }
                if !(squeezing_r > 0.0) =>
            {
                Err(invalid("squeezing parameter must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRole {
    Main,
    /// Main gate with the previous step's correction folded in.
    MergedCorrection,
    Correction,
    ClosingFlat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub role: StepRole,
    pub gate_index: Option<usize>,
    pub basis: Quadrature,
    /// Degree of the teleported polynomial, independent of outcomes.
    pub degree: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub role: StepRole,
    pub gate_index: Option<usize>,
    pub logical_gate: GateTerm,
    pub physical_gate: GateTerm,
    pub ancilla: AncillaKind,
    pub beta: f64,
    /// Requested minus recorded outcome.
    pub beta_rounding: f64,
    pub accepted: bool,
    pub attempts: usize,
    pub window_probability: f64,
    pub correction: Option<GateSequence>,
    /// Teleportation steps so far, this one included.
    pub fourier_count: usize,
    /// The ancilla depends on an earlier measurement outcome.
    pub conditional_ancilla: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTranscript {
    pub mode: ProtocolMode,
    pub fourier_strategy: FourierStrategy,
    pub scheme: Option<CompositionScheme>,
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub beta_bin_width: f64,
    pub steps: Vec<StepRecord>,
    /// Teleportations excluding closing flats.
    pub teleport_count: usize,
    pub closing_flats: usize,
    pub pre_applied_fourier: usize,
    pub final_fourier_count: usize,
    pub total_attempts: usize,
    /// Product of per-step window probabilities (1 outside postselection).
    pub success_probability: f64,
}

impl ProtocolTranscript {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolRun {
    pub output: GridState,
    pub transcript: ProtocolTranscript,
}

/// Step plan for the deterministic mode. A gate of degree `d ≥ 3` leaves a
/// correction of degree `d − 1` in its own basis; it merges into the next
/// gate when the bases match and otherwise becomes a separate step.
pub fn deterministic_schedule(seq: &GateSequence) -> Vec<PlannedStep> {
    let mut plan = Vec::new();
    let mut pending: Option<(Quadrature, u32)> = None;
    let after = |basis: Quadrature, degree: u32| (degree >= 3).then_some((basis, degree - 1));
    for (i, g) in seq.terms().iter().enumerate() {
        while let Some((basis, degree)) = pending {
            if basis == g.basis {
                break;
            }
            plan.push(PlannedStep { role: StepRole::Correction, gate_index: None, basis, degree });
            pending = after(basis, degree);
        }
        let step = match pending.take() {
            Some((_, degree)) => PlannedStep {
                role: StepRole::MergedCorrection,
                gate_index: Some(i),
                basis: g.basis,
                degree: degree.max(g.degree()),
            },
            None => PlannedStep { role: StepRole::Main, gate_index: Some(i), basis: g.basis, degree: g.degree() },
        };
        pending = after(step.basis, step.degree);
        plan.push(step);
    }
    while let Some((basis, degree)) = pending {
        plan.push(PlannedStep { role: StepRole::Correction, gate_index: None, basis, degree });
        pending = after(basis, degree);
    }
    plan
}

fn postselect_schedule(seq: &GateSequence) -> Vec<PlannedStep> {
    seq.terms()
        .iter()
        .enumerate()
        .map(|(i, g)| PlannedStep { role: StepRole::Main, gate_index: Some(i), basis: g.basis, degree: g.degree() })
        .collect()
}

fn ancilla_for(gate: &GateTerm, model: AncillaModel, g: &GridSpec) -> Result<(AncillaSpec, GridState)> {
    // Gaussian gates use squeezed resources, modeled as ideal.
    let spec = if gate.degree() <= 2 {
        AncillaSpec::ideal(gate.coeffs.clone())?
    } else {
        match model {
            AncillaModel::Ideal => AncillaSpec::ideal(gate.coeffs.clone())?,
            AncillaModel::FirstOrder { squeezing_r } => AncillaSpec::first_order(gate.coeffs.clone(), squeezing_r)?,
            AncillaModel::PhotonSubtracted { squeezing_r } => {
                AncillaSpec::photon_subtracted(gate.coeffs.clone(), squeezing_r)?
            }
        }
    };
    let state = make_ancilla(&spec, g)?;
    Ok((spec, state))
}

struct Measured {
    state: GridState,
    outcome: LatticeOutcome,
    attempts: usize,
    window_probability: f64,
}

fn measure_and_teleport(
    state: &GridState,
    basis: Quadrature,
    ancilla: &GridState,
    config: &ProtocolConfig,
    postselect: bool,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<Measured> {
    let g = *state.spec();
    let density = match basis {
        Quadrature::X => outcome_density(state, ancilla)?,
        Quadrature::P => outcome_density_p(state, ancilla)?,
    };
    let window_probability =
        if postselect { window_probability(&density, &g, config.postselect_window) } else { 1.0 };
    let mut attempts = 0;
    let beta = loop {
        attempts += 1;
        let requested = match config.outcome {
            OutcomePolicy::Sample => sample_outcome(&density, &g, rng),
            OutcomePolicy::Forced { beta } => beta,
        };
        let snapped = snap_outcome(requested, &g)?;
        if !postselect || snapped.beta.abs() <= config.postselect_window {
            break requested;
        }
        if matches!(config.outcome, OutcomePolicy::Forced { .. }) || attempts >= config.max_retries {
            return Err(Error::PostselectFailure { step: index, attempts });
        }
    };
    let (out, outcome) = match basis {
        Quadrature::X => teleport_step_detailed(state, ancilla, beta)?,
        Quadrature::P => teleport_step_p(state, ancilla, beta)?,
    };
    Ok(Measured { state: out, outcome, attempts, window_probability })
}

fn apply_term(s: &GridState, t: &GateTerm) -> Result<GridState> {
    apply_phase_polynomial(s, t.basis, &t.coeffs)
}

pub fn run_protocol(input: &GridState, scheme: &CompositionScheme, config: &ProtocolConfig) -> Result<ProtocolRun> {
    run_sequence_protocol(input, &scheme.sequence()?, Some(scheme), config)
}

pub fn run_protocol_fock(
    input: &FockState,
    grid: &GridSpec,
    scheme: &CompositionScheme,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    run_protocol(&fock_to_position(input, grid)?, scheme, config)
}

pub fn run_sequence_protocol(
    input: &GridState,
    seq: &GateSequence,
    scheme: Option<&CompositionScheme>,
    config: &ProtocolConfig,
) -> Result<ProtocolRun> {
    config.validate()?;
    let g = *input.spec();
    let mut transcript = ProtocolTranscript {
        mode: config.mode,
        fourier_strategy: config.fourier,
        scheme: scheme.cloned(),
        rng_seed: config.rng_seed,
        rng_stream: config.rng_stream,
        beta_bin_width: g.dx,
        steps: Vec::new(),
        teleport_count: 0,
        closing_flats: 0,
        pre_applied_fourier: 0,
        final_fourier_count: 0,
        total_attempts: 0,
        success_probability: 1.0,
    };
    let plan = match config.mode {
        ProtocolMode::Direct => {
            let output = apply_sequence(seq, input)?;
            return Ok(ProtocolRun { output, transcript });
        }
        ProtocolMode::Postselect => postselect_schedule(seq),
        ProtocolMode::Deterministic => deterministic_schedule(seq),
    };
    let postselect = config.mode == ProtocolMode::Postselect;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(config.rng_stream);

    let n = plan.len();
    let (mut state, mut q) = match config.fourier {
        FourierStrategy::PreApplied => {
            transcript.pre_applied_fourier = n % 4;
            (fourier_power(input, (n % 4) as i64)?, (n % 4) as i64)
        }
        _ => (input.clone(), 0i64),
    };
    let mut pending: Option<GateTerm> = None;
    let mut count = 0usize;

    for (index, step) in plan.iter().enumerate() {
        let logical = match step.role {
            StepRole::Main => seq.terms()[step.gate_index.expect("main step has a gate")].clone(),
            StepRole::MergedCorrection => {
                let c = pending.take().ok_or_else(|| Error::NumericalFailure("missing correction".into()))?;
                let gate = &seq.terms()[step.gate_index.expect("merged step has a gate")];
                let mut coeffs = c.coeffs;
                for (&k, &v) in &gate.coeffs {
                    *coeffs.entry(k).or_insert(0.0) += v;
                }
                GateTerm::new(gate.basis, coeffs)?
            }
            StepRole::Correction | StepRole::ClosingFlat => {
                pending.take().ok_or_else(|| Error::NumericalFailure("missing correction".into()))?
            }
        };
        let physical = fourier_conjugate(&logical, 1 - q);
        let (spec, ancilla) = ancilla_for(&physical, config.ancilla, &g)?;
        let m = measure_and_teleport(&state, physical.basis, &ancilla, config, postselect, &mut rng, index)?;
        state = m.state;
        q -= 1;
        count += 1;
        transcript.total_attempts += m.attempts;
        transcript.success_probability *= m.window_probability;

        let mut correction = None;
        if config.mode == ProtocolMode::Deterministic {
            let corr = correction_sequence(&physical, m.outcome.beta)?;
            let [shift, diff] = corr.terms() else {
                return Err(Error::NumericalFailure("malformed correction".into()));
            };
            let linear = GateTerm::new(diff.basis, [(1, diff.coeff(1))])?;
            state = apply_term(&apply_term(&state, shift)?, &linear)?;
            if step.degree >= 3 {
                let rest: BTreeMap<u32, f64> = diff.coeffs.iter().filter(|(&k, _)| k >= 2).map(|(&k, &v)| (k, v)).collect();
                pending = Some(fourier_conjugate(&GateTerm::new(diff.basis, rest)?, q));
            }
            correction = Some(corr);
        }
        transcript.steps.push(StepRecord {
            index,
            role: step.role,
            gate_index: step.gate_index,
            logical_gate: logical,
            physical_gate: physical,
            ancilla: spec.kind,
            beta: m.outcome.beta,
            beta_rounding: m.outcome.rounding,
            accepted: true,
            attempts: m.attempts,
            window_probability: m.window_probability,
            correction,
            fourier_count: count,
            conditional_ancilla: step.role != StepRole::Main,
        });
    }
    transcript.teleport_count = count;

    if config.fourier == FourierStrategy::ClosingFlats {
        let flats = q.rem_euclid(4) as usize;
        let (_, flat) = ancilla_for(&GateTerm::identity(Quadrature::X), AncillaModel::Ideal, &g)?;
        for k in 0..flats {
            let index = n + k;
            let identity = GateTerm::identity(Quadrature::X);
            // The displacement correction is free, so flats are never postselected.
            let m = measure_and_teleport(&state, Quadrature::X, &flat, config, false, &mut rng, index)?;
            let corr = correction_sequence(&identity, m.outcome.beta)?;
            state = apply_term(&m.state, &corr.terms()[0])?;
            count += 1;
            transcript.total_attempts += m.attempts;
            transcript.steps.push(StepRecord {
                index,
                role: StepRole::ClosingFlat,
                gate_index: None,
                logical_gate: identity.clone(),
                physical_gate: identity,
                ancilla: AncillaKind::Ideal,
                beta: m.outcome.beta,
                beta_rounding: m.outcome.rounding,
                accepted: true,
                attempts: m.attempts,
                window_probability: 1.0,
                correction: Some(corr),
                fourier_count: count,
                conditional_ancilla: false,
            });
        }
        transcript.closing_flats = flats;
    }
    transcript.final_fourier_count = count;
    if pending.is_some() {
        return Err(Error::NumericalFailure("correction left over at the end of the chain".into()));
    }
    Ok(ProtocolRun { output: state, transcript })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{kerr_first_order, kerr_separated, SchemeKind};
    use crate::fock::{fidelity_error, C64};
    use crate::teleport::fourier_power;

    fn input(g: &GridSpec) -> GridState {
        fock_to_position(&FockState::coherent(C64::new(1.0, 0.0), 60).unwrap(), g).unwrap()
    }

    #[test]
    fn separated_schedule_has_ten_steps() {
        let plan = deterministic_schedule(&kerr_separated(1e-3).unwrap());
        assert_eq!(plan.len(), 10);
        let roles: Vec<StepRole> = plan.iter().map(|s| s.role).collect();
        use StepRole::*;
        assert_eq!(
            roles,
            [Main, MergedCorrection, Correction, Main, MergedCorrection, Correction, Main, Correction, Main, Correction]
        );
        assert_eq!(plan.iter().filter(|s| s.gate_index.is_some()).count(), 6);
        assert!(plan.iter().filter(|s| s.role == Correction).all(|s| s.degree == 2));
    }

    #[test]
    fn deterministic_zero_outcomes_match_direct() {
        let g = GridSpec::default();
        let psi = input(&g);
        let scheme = CompositionScheme::new(SchemeKind::Separated, 1e-3, 1).unwrap();
        let direct = run_protocol(&psi, &scheme, &ProtocolConfig::forced(ProtocolMode::Direct, 0.0)).unwrap();
        let run = run_protocol(&psi, &scheme, &ProtocolConfig::forced(ProtocolMode::Deterministic, 0.0)).unwrap();
        assert!(fidelity_error(&run.output, &direct.output).unwrap() < 1e-6);
        let tr = &run.transcript;
        assert_eq!(tr.teleport_count, 10);
        assert_eq!(tr.closing_flats, 2);
        assert_eq!(tr.final_fourier_count % 4, 0);
        assert!(tr.steps.iter().all(|s| s.accepted));
        for (i, s) in tr.steps.iter().enumerate() {
            assert_eq!(s.fourier_count, i + 1);
        }
    }

    #[test]
    fn deterministic_nonzero_outcomes_match_direct() {
        let g = GridSpec::default();
        let psi = input(&g);
        for (kind, beta) in [(SchemeKind::Separated, 0.3), (SchemeKind::FirstOrder, -0.2)] {
            let scheme = CompositionScheme::new(kind, 1e-3, 1).unwrap();
            let direct = apply_sequence(&scheme.sequence().unwrap(), &psi).unwrap();
            let run = run_protocol(&psi, &scheme, &ProtocolConfig::forced(ProtocolMode::Deterministic, beta)).unwrap();
            assert!(fidelity_error(&run.output, &direct).unwrap() < 1e-6, "{kind:?}");
            assert!(run.transcript.steps.iter().any(|s| s.beta != 0.0));
        }
    }

    #[test]
    fn postselect_first_order_uses_four_steps() {
        let g = GridSpec::default();
        let psi = input(&g);
        let scheme = CompositionScheme::new(SchemeKind::FirstOrder, 1e-3, 1).unwrap();
        let run = run_protocol(&psi, &scheme, &ProtocolConfig::forced(ProtocolMode::Postselect, 0.0)).unwrap();
        assert_eq!(run.transcript.teleport_count, 4);
        assert_eq!(run.transcript.closing_flats, 0);
        let direct = apply_sequence(&kerr_first_order(1e-3).unwrap(), &psi).unwrap();
        assert!(fidelity_error(&run.output, &direct).unwrap() < 1e-10);
        assert!(run.transcript.steps.iter().all(|s| s.correction.is_none()));
    }

    #[test]
    fn fourier_strategies_agree() {
        let g = GridSpec::default();
        let psi = input(&g);
        let scheme = CompositionScheme::new(SchemeKind::Separated, 1e-3, 1).unwrap();
        let base = ProtocolConfig::forced(ProtocolMode::Deterministic, 0.0);
        let closing = run_protocol(&psi, &scheme, &base).unwrap();
        let pre = run_protocol(&psi, &scheme, &ProtocolConfig { fourier: FourierStrategy::PreApplied, ..base.clone() })
            .unwrap();
        let residual =
            run_protocol(&psi, &scheme, &ProtocolConfig { fourier: FourierStrategy::Residual, ..base }).unwrap();
        assert!(fidelity_error(&pre.output, &closing.output).unwrap() < 1e-9);
        assert_eq!(pre.transcript.pre_applied_fourier, 2);
        // Dropping the two closing flats leaves F² = F^{10}·F^{−12} on the output.
        let k = residual.transcript.final_fourier_count as i64;
        assert_eq!(k, 10);
        let restored = fourier_power(&residual.output, k).unwrap();
        assert!(fidelity_error(&restored, &closing.output).unwrap() < 1e-9);
    }

    #[test]
    fn postselect_failure_reports_attempts() {
        let g = GridSpec::default();
        let psi = input(&g);
        let scheme = CompositionScheme::new(SchemeKind::FirstOrder, 1e-3, 1).unwrap();
        let cfg = ProtocolConfig { postselect_window: 1e-6, max_retries: 3, ..ProtocolConfig::default() };
        match run_protocol(&psi, &scheme, &cfg) {
            Err(Error::PostselectFailure { step: 0, attempts: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let forced = ProtocolConfig::forced(ProtocolMode::Postselect, 1.0);
        assert!(matches!(run_protocol(&psi, &scheme, &forced), Err(Error::PostselectFailure { .. })));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(ProtocolConfig { postselect_window: 0.0, ..ProtocolConfig::default() }.validate().is_err());
        assert!(ProtocolConfig { max_retries: 0, ..ProtocolConfig::default() }.validate().is_err());
        let cfg: ProtocolConfig = serde_json::from_str(r#"{"mode":"deterministic","outcome":{"kind":"forced","beta":0.0}}"#).unwrap();
        assert_eq!(cfg.mode, ProtocolMode::Deterministic);
        assert_eq!(cfg.max_retries, 1000);
        let g = GridSpec::default();
        let scheme = CompositionScheme::new(SchemeKind::FirstOrder, 1e-3, 1).unwrap();
        let run = run_protocol(&input(&g), &scheme, &cfg).unwrap();
        let text = run.transcript.to_json().unwrap();
        let back: ProtocolTranscript = serde_json::from_str(&text).unwrap();
        assert_eq!(back, run.transcript);
    }
}
