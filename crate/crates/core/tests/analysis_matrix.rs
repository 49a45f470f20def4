//! Transition-matrix math checked against independent brute-force counting
//! over randomized verdict sets, plus the accuracy identities that tie the
//! matrix views to the accuracy table.

use contrast_core::{
    accuracy_table, build_matrix, errors_only_view, matrix_from_csv, matrix_to_csv, JudgedSample,
    ResponseState, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_verdicts(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Verdict>, Vec<Verdict>) {
    let state = |rng: &mut ChaCha8Rng| ResponseState::ORDER[rng.random_range(0..5)];
    let make = |states: Vec<ResponseState>| {
        states
            .into_iter()
            .enumerate()
            .map(|(i, s)| Verdict::new(format!("sample-{i:04}"), s, "m", "raw"))
            .collect::<Vec<_>>()
    };
    let baseline = make((0..n).map(|_| state(rng)).collect());
    let contrast = make((0..n).map(|_| state(rng)).collect());
    (baseline, contrast)
}

/// Every cell of the built matrix equals a brute-force pair count scaled to
/// percent, for a spread of population sizes including awkward odd ones.
#[test]
fn matrix_matches_independent_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in [1usize, 2, 3, 7, 13, 100, 500] {
        let (baseline, contrast) = random_verdicts(n, &mut rng);
        let matrix = build_matrix(&baseline, &contrast).unwrap();
        matrix.validate().unwrap();

        let mut counts = [[0u64; 5]; 5];
        for (b, c) in baseline.iter().zip(&contrast) {
            counts[b.state.index()][c.state.index()] += 1;
        }
        for base in ResponseState::ORDER {
            for con in ResponseState::ORDER {
                let expected = 100.0 * counts[base.index()][con.index()] as f64 / n as f64;
                let got = matrix.cell(base, con).unwrap();
                assert!(
                    (got - expected).abs() < 1e-12,
                    "n={n} cell ({base},{con}): got {got}, counted {expected}"
                );
            }
        }
        assert_eq!(matrix.counts(), counts.to_vec());

        let total: f64 = ResponseState::ORDER
            .iter()
            .flat_map(|b| ResponseState::ORDER.iter().map(|c| matrix.cell(*b, *c).unwrap()))
            .sum();
        assert!((total - 100.0).abs() < 1e-9);
    }
}

/// The errors-only view equals brute-force counting restricted to the
/// samples the baseline got wrong.
#[test]
fn errors_only_matches_counting_over_the_wrong_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for n in [5usize, 17, 250] {
        let (baseline, contrast) = random_verdicts(n, &mut rng);
        let wrong_pairs: Vec<(ResponseState, ResponseState)> = baseline
            .iter()
            .zip(&contrast)
            .filter(|(b, _)| b.state != ResponseState::Correct)
            .map(|(b, c)| (b.state, c.state))
            .collect();
        let full = build_matrix(&baseline, &contrast).unwrap();
        let errors = match errors_only_view(&full) {
            Ok(m) => m,
            Err(_) => {
                assert!(wrong_pairs.is_empty());
                continue;
            }
        };

        assert_eq!(errors.n_samples(), wrong_pairs.len());
        for base in &ResponseState::ORDER[..4] {
            for con in ResponseState::ORDER {
                let count =
                    wrong_pairs.iter().filter(|(b, c)| b == base && *c == con).count();
                let expected = 100.0 * count as f64 / wrong_pairs.len() as f64;
                assert!((errors.cell(*base, con).unwrap() - expected).abs() < 1e-9);
            }
        }
        errors.validate().unwrap();
    }
}

/// Accuracy falls out of the matrix two ways: the contrast accuracy is the
/// CORRECT column of the full view, the baseline accuracy its CORRECT row.
/// Both must agree with the accuracy table built from the same verdicts.
#[test]
fn accuracy_identities_tie_matrix_and_table_together() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (baseline, contrast) = random_verdicts(400, &mut rng);
    let matrix = build_matrix(&baseline, &contrast).unwrap();

    let correct_column: f64 = ResponseState::ORDER
        .iter()
        .map(|b| matrix.cell(*b, ResponseState::Correct).unwrap())
        .sum();
    let correct_row: f64 = ResponseState::ORDER
        .iter()
        .map(|c| matrix.cell(ResponseState::Correct, *c).unwrap())
        .sum();

    let to_samples = |verdicts: &[Verdict]| -> Vec<JudgedSample> {
        verdicts
            .iter()
            .map(|v| JudgedSample {
                sample_id: v.sample_id.clone(),
                task: "synthetic".to_string(),
                correct: Some(v.correct),
            })
            .collect()
    };
    let table = accuracy_table(&[
        ("BASE".to_string(), to_samples(&baseline)),
        ("CONTRAST".to_string(), to_samples(&contrast)),
    ])
    .unwrap();

    let base_pct = table.rows[0].overall.percent().unwrap();
    let contrast_pct = table.rows[1].overall.percent().unwrap();
    assert!((correct_row - base_pct).abs() < 1e-9);
    assert!((correct_column - contrast_pct).abs() < 1e-9);
}

/// Random matrices of many shapes and populations survive the CSV round
/// trip bit for bit, in both views.
#[test]
fn random_matrices_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    for _ in 0..20 {
        let n = rng.random_range(1..300);
        let (baseline, contrast) = random_verdicts(n, &mut rng);
        let full = build_matrix(&baseline, &contrast).unwrap();

        let mut matrices = vec![full.clone()];
        if let Ok(errors) = errors_only_view(&full) {
            matrices.push(errors);
        }
        for matrix in matrices {
            let text = matrix_to_csv(&matrix);
            let back = matrix_from_csv(&text).unwrap();
            assert_eq!(back.n_samples(), matrix.n_samples());
            assert_eq!(back.view(), matrix.view());
            for base in back.row_states() {
                for con in ResponseState::ORDER {
                    let a = matrix.cell(*base, con).unwrap();
                    let b = back.cell(*base, con).unwrap();
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            assert_eq!(matrix_to_csv(&back), text);
        }
    }
}
