use cvkerr_core::ancilla::squeezing_proxy;
use cvkerr_core::fock::{FockState, C64};
use cvkerr_core::grid::{fock_to_position, GridSpec, GridState};
use cvkerr_core::teleport::{homodyne_sample, outcome_density, sample_outcome, snap_outcome, window_probability};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SAMPLES: usize = 10_000;

fn setup() -> (GridState, GridState) {
    let g = GridSpec::default();
    let psi = fock_to_position(&FockState::coherent(C64::new(0.7, -0.4), 60).unwrap(), &g).unwrap();
    let ancilla = squeezing_proxy(0.3, &g).unwrap();
    (psi, ancilla)
}

/// Index of the lattice outcome `β` in a density vector.
fn lattice_index(beta: f64, g: &GridSpec) -> usize {
    (snap_outcome(beta, g).unwrap().m + (g.n_points / 2) as i64) as usize
}

#[test]
fn density_integrates_to_one() {
    let (psi, ancilla) = setup();
    let density = outcome_density(&psi, &ancilla).unwrap();
    let total: f64 = density.iter().sum::<f64>() * psi.spec().dx;
    assert!((total - 1.0).abs() <= 1e-6, "{total}");
}

#[test]
fn histogram_matches_density_within_three_sigma() {
    let (psi, ancilla) = setup();
    let g = *psi.spec();
    let density = outcome_density(&psi, &ancilla).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut counts = vec![0usize; g.n_points];
    for _ in 0..SAMPLES {
        counts[lattice_index(sample_outcome(&density, &g, &mut rng), &g)] += 1;
    }
    // Bins of 8 lattice points; sparse bins carry too few counts for a normal bound.
    let width = 8;
    let mut checked = 0;
    for (chunk, hits) in density.chunks(width).zip(counts.chunks(width)) {
        let p: f64 = chunk.iter().sum::<f64>() * g.dx;
        let expected = p * SAMPLES as f64;
        if expected < 5.0 {
            continue;
        }
        let observed = hits.iter().sum::<usize>() as f64;
        let sigma = (SAMPLES as f64 * p * (1.0 - p)).sqrt();
        assert!((observed - expected).abs() <= 3.0 * sigma, "bin: observed {observed}, expected {expected:.1}, sigma {sigma:.2}");
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} populated bins");
}

#[test]
fn postselection_rate_matches_window_integral() {
    let (psi, ancilla) = setup();
    let g = *psi.spec();
    let window = 0.05;
    let density = outcome_density(&psi, &ancilla).unwrap();
    let p = window_probability(&density, &g, window);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let accepted = (0..SAMPLES)
        .filter(|_| snap_outcome(sample_outcome(&density, &g, &mut rng), &g).unwrap().beta.abs() <= window)
        .count() as f64;
    let expected = p * SAMPLES as f64;
    let sigma = (SAMPLES as f64 * p * (1.0 - p)).sqrt();
    assert!(p > 1e-3, "window probability {p}");
    assert!((accepted - expected).abs() <= 3.0 * sigma, "accepted {accepted}, expected {expected:.1}, sigma {sigma:.2}");
}

#[test]
fn seeded_sampling_is_reproducible() {
    let (psi, ancilla) = setup();
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20).map(|_| homodyne_sample(&psi, &ancilla, &mut rng).unwrap()).collect::<Vec<f64>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}
