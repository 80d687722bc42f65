mod common;

use common::{brute_force_interaction as brute_force, pipeline_gradient_errors, tiny_spec as spec};
use lgtse::guidance::{
    attention_weights, context_interaction, noise_agnostic_guidance, IdentityDenoiser, InteractionConfig,
    OracleDenoiser,
};
use proptest::prelude::*;
use tse_autograd::Tensor;

fn matrix(cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 10 * cols)
}

fn permute_cols(v: &[f64], rows: usize, perm: &[usize]) -> Vec<f64> {
    let cols = perm.len();
    let mut out = vec![0.0; v.len()];
    for r in 0..rows {
        for (c, &p) in perm.iter().enumerate() {
            out[r * cols + c] = v[r * cols + p];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_columns_sum_to_one(e in matrix(4), y in matrix(6)) {
        let a = attention_weights(
            &Tensor::from_vec(&[10, 4], e),
            &Tensor::from_vec(&[10, 6], y),
            InteractionConfig::default(),
        );
        for j in 0..6 {
            let s: f64 = (0..4).map(|i| a.data()[i * 6 + j]).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_brute_force(e in matrix(3), y in matrix(5)) {
        let g = context_interaction(&spec(3, &e), &spec(5, &y)).unwrap();
        let want = brute_force(&e, &y, 10, 3, 5);
        for (a, b) in g.data.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_equivariance(e in matrix(4), y in matrix(5), shift in 1usize..5) {
        let g = context_interaction(&spec(4, &e), &spec(5, &y)).unwrap();
        // Permuting mixture frames permutes output columns.
        let perm: Vec<usize> = (0..5).map(|j| (j + shift) % 5).collect();
        let gp = context_interaction(&spec(4, &e), &spec(5, &permute_cols(&y, 10, &perm))).unwrap();
        let expect = permute_cols(g.data.data(), 10, &perm);
        for (a, b) in gp.data.data().iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Reordering enrollment frames leaves the guidance unchanged.
        let eperm = [3, 1, 0, 2];
        let ge = context_interaction(&spec(4, &permute_cols(&e, 10, &eperm)), &spec(5, &y)).unwrap();
        for (a, b) in ge.data.data().iter().zip(g.data.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_oracle_are_bit_exact(e in matrix(3), y in matrix(4), c in matrix(4)) {
        let (e, y, clean) = (spec(3, &e), spec(4, &y), spec(4, &c));
        let (via, _) = noise_agnostic_guidance(&e, &y, &IdentityDenoiser).unwrap();
        let direct = context_interaction(&e, &y).unwrap();
        prop_assert_eq!(via.data.data(), direct.data.data());
        let (via, _) = noise_agnostic_guidance(&e, &y, &OracleDenoiser { clean: clean.clone() }).unwrap();
        let direct = context_interaction(&e, &clean).unwrap();
        prop_assert_eq!(via.data.data(), direct.data.data());
    }
}

#[test]
fn two_by_two_hand_example() {
    // E = I (first two rows), Y column (5, 0): weights e^5/(e^5+1) and 1/(e^5+1).
    let mut e = vec![0.0; 20];
    e[0] = 1.0;
    e[3] = 1.0;
    let mut y = vec![0.0; 10];
    y[0] = 5.0;
    let g = context_interaction(&spec(2, &e), &spec(1, &y)).unwrap();
    let want = brute_force(&e, &y, 10, 2, 1);
    assert!((g.data.data()[0] - want[0]).abs() < 1e-9);
    assert!((g.data.data()[1] - want[1]).abs() < 1e-9);
    assert!((want[0] - 0.993307).abs() < 1e-6);
}

#[test]
fn pipeline_gradient_matches_finite_differences() {
    for seed in [1u64, 12345, 777] {
        let (e64, e32) = pipeline_gradient_errors(seed);
        assert!(e64 < 1e-5, "seed {seed}: f64 relative error {e64}");
        assert!(e32 < 1e-3, "seed {seed}: f32 relative error {e32}");
    }
}
