//! Experiment runner: configuration, registry, reports and output files.

mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{FockState, C64};
use crate::grid::{GridAdjustment, GridSpec, GridState};
use crate::decomposition::{CompositionScheme, GateSequence, SchemeKind};
use crate::teleport::{run_sequence_protocol, AncillaModel, OutcomePolicy, ProtocolConfig, ProtocolMode, ProtocolRun};

pub use experiments::{correction_law_error, first_order_error, fock_error, linearized_product_error, FockComparison};

/// Registered experiments and what they run.
pub const EXPERIMENTS: &[(&str, &str)] = &[
    ("table1", "first-order errors for t in {1e-3, 1e-2} and coherent amplitudes {1, 5}"),
    ("fig1", "wavefunctions at t = 1e-3, coherent amplitude 1"),
    ("fig2", "wavefunctions at t = 1e-1, coherent amplitude 1"),
    ("fig3", "postselected chain with first-order ancillae at t = 1e-3"),
    ("single_photon", "(|0> + |1>)/sqrt(2) at t = 1e-3"),
    ("third_order", "third-order composition at t = 1e-3 against first order"),
    ("strong_kerr", "1000 repetitions of third_order(1e-3) against t = 1"),
    ("ns_gate", "500 repetitions of third_order(pi 1e-3) on (|0> + |1> + |2>)/sqrt(3)"),
    ("appendix", "two-mode identity residuals at dim 30"),
    ("teleport_equiv", "protocol runs against direct application for every scheme"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpec {
    Coherent { re: f64, im: f64 },
    /// Real Fock amplitudes, normalized on use.
    Superposition { coeffs: Vec<f64> },
}

impl InputSpec {
    pub fn coherent(amplitude: f64) -> Self {
        Self::Coherent { re: amplitude, im: 0.0 }
    }

    pub fn state(&self, dim: usize) -> Result<FockState> {
        match self {
            Self::Coherent { re, im } => FockState::coherent(C64::new(*re, *im), dim),
            Self::Superposition { coeffs } => {
                if coeffs.len() > dim {
                    return Err(invalid("superposition exceeds the truncation"));
                }
                let mut v = vec![C64::new(0.0, 0.0); dim];
                for (z, &c) in v.iter_mut().zip(coeffs) {
                    *z = C64::new(c, 0.0);
                }
                FockState::from_coeffs(v)?.normalized()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Coherent { re, im } if *im == 0.0 => format!("coherent {re}"),
            Self::Coherent { re, im } => format!("coherent {re}{im:+}i"),
            Self::Superposition { coeffs } => format!("superposition {coeffs:?}"),
        }
    }
}

fn default_jobs() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Fock truncation; each experiment has its own default.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub grid_points: Option<usize>,
    /// Requested `[x_min, x_max]`; spacing is adjusted to stay self-dual.
    #[serde(default)]
    pub grid_window: Option<[f64; 2]>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub input: Option<InputSpec>,
    #[serde(default)]
    pub scheme: Option<SchemeKind>,
    #[serde(default)]
    pub mode: Option<ProtocolMode>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub outcome: Option<OutcomePolicy>,
    #[serde(default)]
    pub ancilla: Option<AncillaModel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

/// Flag values; each `Some` replaces the config-file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigOverrides {
    pub experiment: Option<String>,
    pub dim: Option<usize>,
    pub grid_points: Option<usize>,
    pub t: Option<f64>,
    pub scheme: Option<SchemeKind>,
    pub mode: Option<ProtocolMode>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            dim: None,
            grid_points: None,
            grid_window: None,
            t: None,
            input: None,
            scheme: None,
            mode: None,
            repetitions: None,
            outcome: None,
            ancilla: None,
            seed: 0,
            out_dir: None,
            jobs: default_jobs(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn apply_overrides(&mut self, o: &ConfigOverrides) {
        if let Some(v) = &o.experiment {
            self.experiment = v.clone();
        }
        if let Some(v) = o.dim {
            self.dim = Some(v);
        }
        if let Some(v) = o.grid_points {
            self.grid_points = Some(v);
        }
        if let Some(v) = o.t {
            self.t = Some(v);
        }
        if let Some(v) = o.scheme {
            self.scheme = Some(v);
        }
        if let Some(v) = o.mode {
            self.mode = Some(v);
        }
        if let Some(v) = o.repetitions {
            self.repetitions = Some(v);
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = Some(v.clone());
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.iter().any(|(name, _)| *name == self.experiment) {
            return Err(Error::UnknownExperiment(self.experiment.clone()));
        }
        if let Some(d) = self.dim {
            if d < 8 {
                return Err(invalid(format!("dim must be at least 8, got {d}")));
            }
        }
        if let Some(t) = self.t {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid(format!("t must be positive, got {t}")));
            }
        }
        if self.repetitions == Some(0) {
            return Err(invalid("repetitions must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(invalid("jobs must be at least 1"));
        }
        if let Some([lo, hi]) = self.grid_window {
            if !(lo < hi) {
                return Err(invalid("grid window must satisfy x_min < x_max"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<(GridSpec, Option<GridAdjustment>)> {
        let n = self.grid_points.unwrap_or(crate::grid::DEFAULT_POINTS);
        match self.grid_window {
            Some([lo, hi]) => {
                let adj = GridSpec::from_window(lo, hi, n)?;
                Ok((adj.spec, Some(adj)))
            }
            None => Ok((GridSpec::self_dual(n)?, None)),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("results").join(&self.experiment))
    }
}

/// One comparison against a reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// `|value − reference| ≤ tolerance`.
    pub fn near(name: &str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            reference: Some(reference),
            tolerance: Some(tolerance),
            pass: (value - reference).abs() <= tolerance,
        }
    }

    /// `value ≤ bound`.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, reference: Some(bound), tolerance: None, pass: value <= bound }
    }

    pub fn flag(name: &str, pass: bool) -> Self {
        Self { name: name.into(), value: if pass { 1.0 } else { 0.0 }, reference: None, tolerance: None, pass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub t: f64,
    pub input: String,
    pub epsilon: f64,
    pub log10_epsilon: f64,
    /// Mass in the top quarter of the truncation.
    pub tail_mass_exact: f64,
    /// Absent when the approximate state only exists on the grid and does
    /// not fit the truncation.
    pub tail_mass_approx: Option<f64>,
    pub state_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub grid: GridSpec,
    pub grid_adjustment: Option<GridAdjustment>,
    pub epsilon: f64,
    pub log10_epsilon: f64,
    pub cells: Vec<CellReport>,
    pub checks: Vec<Check>,
    pub diagnostics: BTreeMap<String, f64>,
    pub files: Vec<String>,
    pub passed: bool,
    pub runtime_seconds: f64,
}

pub fn log10_error(eps: f64) -> f64 {
    eps.max(1e-300).log10()
}

/// Writes `x, re_exact, im_exact, re_approx, im_approx`, with the
/// approximate state's global phase aligned to the exact one.
pub fn write_state_csv(path: &Path, exact: &GridState, approx: &GridState) -> Result<()> {
    use crate::fock::StateVector;
    if exact.spec() != approx.spec() {
        return Err(invalid("states live on different grids"));
    }
    let overlap = approx.inner(exact)?;
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { C64::new(1.0, 0.0) };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "re_exact", "im_exact", "re_approx", "im_approx"])?;
    let g = exact.spec();
    for (j, (e, a)) in exact.values().iter().zip(approx.values()).enumerate() {
        let a = a * phase;
        w.serialize((g.x(j), e.re, e.im, a.re, a.im))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a state CSV back as `(exact, approx)` on `g`.
pub fn read_state_csv(path: &Path, g: &GridSpec) -> Result<(GridState, GridState)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut exact = Vec::new();
    let mut approx = Vec::new();
    for row in r.deserialize() {
        let (_, re_e, im_e, re_a, im_a): (f64, f64, f64, f64, f64) = row?;
        exact.push(C64::new(re_e, im_e));
        approx.push(C64::new(re_a, im_a));
    }
    Ok((GridState::new(*g, exact)?, GridState::new(*g, approx)?))
}

/// Order-preserving map over at most `jobs` worker threads.
pub fn par_map<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = slots
            .chunks_mut(chunk)
            .map(|part| {
                let work: Vec<T> = part.iter_mut().map(|s| s.take().expect("item taken once")).collect();
                scope.spawn(move || work.into_iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// `runs` independent protocol runs sharing `base.rng_seed`, run `i` on
/// generator stream `i`.
pub fn run_protocol_batch(
    input: &GridState,
    seq: &GateSequence,
    scheme: Option<&CompositionScheme>,
    base: &ProtocolConfig,
    runs: usize,
    jobs: usize,
) -> Vec<Result<ProtocolRun>> {
    par_map((0..runs as u64).collect(), jobs, |stream| {
        run_sequence_protocol(input, seq, scheme, &ProtocolConfig { rng_stream: stream, ..base.clone() })
    })
}

pub(crate) struct Outcome {
    pub epsilon: f64,
    pub cells: Vec<CellReport>,
    pub checks: Vec<Check>,
    pub diagnostics: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let (grid, grid_adjustment) = config.grid()?;
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    let out = experiments::dispatch(config, &grid, &dir)?;
    let mut files = out.files;
    files.push("report.json".into());
    let mut report = ExperimentReport {
        experiment: config.experiment.clone(),
        config: config.clone(),
        grid,
        grid_adjustment,
        epsilon: out.epsilon,
        log10_epsilon: log10_error(out.epsilon),
        cells: out.cells,
        checks: out.checks,
        diagnostics: out.diagnostics,
        files,
        passed: false,
        runtime_seconds: 0.0,
    };
    report.passed = report.checks.iter().all(|c| c.pass);
    report.runtime_seconds = start.elapsed().as_secs_f64();
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
