use decoupling_core::banach::{NormTarget, PhiFunctional};
use decoupling_core::chaos::{evaluate, evaluate_sliced, exact_l2, exact_modular, polarize_in, walsh_expand, WalshVar};
use decoupling_core::identities::{random_family, random_raw_family};
use decoupling_core::multiindex::{CoefficientFamily, MultiIndex, RawFamily};
use decoupling_core::randsource::{sample_matrix, DistributionSpec, SampleMatrix, SampleMode, StreamKey};
use decoupling_core::verify::{Estimate, Verdict};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn raw_distance(a: &RawFamily, b: &RawFamily) -> f64 {
    let zero = vec![0.0; a.empty_term().len()];
    let mut worst = max_diff(a.empty_term(), b.empty_term());
    for (x, y) in [(a, b), (b, a)] {
        for (alpha, tuple, v) in x.entries() {
            worst = worst.max(max_diff(v, y.get(alpha, tuple).unwrap_or(&zero)));
        }
    }
    worst
}

fn family(seed: u64, n: usize, coords: usize, dim: usize) -> CoefficientFamily {
    random_family(&mut ChaCha8Rng::seed_from_u64(seed), n, coords, dim, 0.5).unwrap()
}

fn sign_matrix(seed: u64, n: usize, cols: usize, mode: SampleMode) -> SampleMatrix {
    sample_matrix(&DistributionSpec::Rademacher, n, cols, mode, StreamKey::new(seed, 7)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operators_idempotent_and_commuting(seed in any::<u64>(), n in 1usize..=4, coords in 1usize..=4) {
        let f = random_raw_family(&mut ChaCha8Rng::seed_from_u64(seed), n, coords, 1, 0.4).unwrap();
        let s = |g: &RawFamily| g.symmetrize().unwrap();
        let d = |g: &RawFamily| g.nullify_diagonals();
        let a = |g: &RawFamily| g.index_average().unwrap();
        prop_assert!(raw_distance(&s(&s(&f)), &s(&f)) <= 1e-12);
        prop_assert!(raw_distance(&d(&d(&f)), &d(&f)) <= 1e-12);
        prop_assert!(raw_distance(&a(&a(&f)), &a(&f)) <= 1e-12);
        prop_assert!(raw_distance(&s(&d(&f)), &d(&s(&f))) <= 1e-12);
        prop_assert!(raw_distance(&s(&a(&f)), &a(&s(&f))) <= 1e-12);
        prop_assert!(raw_distance(&d(&a(&f)), &a(&d(&f))) <= 1e-12);
    }

    #[test]
    fn operators_self_adjoint_for_plain_pairing(seed in any::<u64>(), n in 1usize..=3, coords in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f1 = random_raw_family(&mut rng, n, coords, 1, 0.5).unwrap();
        let f2 = random_raw_family(&mut rng, n, coords, 1, 0.5).unwrap();
        let pair = |x: &RawFamily, y: &RawFamily| x.pointwise_product(y).unwrap().plain_sum()[0];
        for op in [
            |g: &RawFamily| g.symmetrize().unwrap(),
            |g: &RawFamily| g.nullify_diagonals(),
            |g: &RawFamily| g.index_average().unwrap(),
        ] {
            prop_assert!((pair(&op(&f1), &f2) - pair(&f1, &op(&f2))).abs() <= 1e-12);
        }
    }

    #[test]
    fn sliced_matches_direct(seed in any::<u64>(), n in 1usize..=4, coords in 1usize..=5, coupled in any::<bool>()) {
        let f = family(seed, n, coords, 2);
        let mode = if coupled { SampleMode::Coupled } else { SampleMode::Decoupled };
        let x = sample_matrix(&DistributionSpec::Gaussian, n, coords, mode, StreamKey::new(seed, 3)).unwrap();
        prop_assert!(max_diff(&evaluate_sliced(&f, &x).unwrap(), &evaluate(&f, &x).unwrap()) <= 1e-12);
    }

    #[test]
    fn symmetrize_preserves_coupled_evaluation(seed in any::<u64>(), n in 1usize..=4, coords in 1usize..=4) {
        let f = family(seed, n, coords, 1);
        let x = sample_matrix(&DistributionSpec::Gaussian, n, coords, SampleMode::Coupled, StreamKey::new(seed, 4)).unwrap();
        prop_assert!(max_diff(&evaluate(&f.symmetrize().unwrap(), &x).unwrap(), &evaluate(&f, &x).unwrap()) <= 1e-12);
    }

    #[test]
    fn walsh_expansion_agrees_with_evaluation(seed in any::<u64>(), n in 1usize..=3, coords in 1usize..=4, coupled in any::<bool>()) {
        let f = family(seed, n, coords, 2);
        let mode = if coupled { SampleMode::Coupled } else { SampleMode::Decoupled };
        let p = walsh_expand(&f, mode).unwrap();
        let x = sign_matrix(seed, n, coords, mode);
        let via_walsh = p.evaluate(|v| match v {
            WalshVar::Column(c) => x.at(1, c),
            WalshVar::Entry { row, col } => x.at(row as usize, col),
        });
        prop_assert!(max_diff(&via_walsh, &evaluate(&f, &x).unwrap()) <= 1e-12);
    }

    #[test]
    fn exact_l2_matches_enumeration(seed in any::<u64>(), n in 1usize..=3, coords in 1usize..=3, coupled in any::<bool>()) {
        let f = family(seed, n, coords, 2);
        let mode = if coupled { SampleMode::Coupled } else { SampleMode::Decoupled };
        let l2 = exact_l2(&walsh_expand(&f, mode).unwrap());
        let enumerated = exact_modular(&f, mode, &PhiFunctional::Power(2.0), &NormTarget::lp(2, 2.0).unwrap()).unwrap();
        prop_assert!((l2 - enumerated).abs() <= 1e-10 * l2.max(1.0));
    }

    #[test]
    fn polarization_holds(seed in any::<u64>(), k in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..k + 1).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let table = polarize_in(MultiIndex::full(k).unwrap(), &rows, k + 1).unwrap();
        prop_assert!(table.max_deviation() <= 1e-10);
    }

    #[test]
    fn verdict_symmetric_under_swap(a in -10.0f64..10.0, b in -10.0f64..10.0, sa in 0.0f64..2.0, sb in 0.0f64..2.0) {
        let l = Estimate { mean: a, se: sa, m: 100 };
        let r = Estimate { mean: b, se: sb, m: 100 };
        prop_assert_eq!(Verdict::judge(&l, &r, 2.5758), Verdict::judge_reversed(&r, &l, 2.5758));
    }

    #[test]
    fn family_json_round_trip(seed in any::<u64>(), n in 0usize..=3, coords in 1usize..=3) {
        let f = family(seed, n, coords, 2);
        prop_assert_eq!(CoefficientFamily::from_json(&f.to_json()).unwrap(), f);
    }
}

#[test]
fn degree_one_laws_coincide() {
    // For k = 1 the coupled and decoupled chaoses are the same polynomial.
    let f = family(5, 1, 6, 2);
    let c = exact_l2(&walsh_expand(&f, SampleMode::Coupled).unwrap());
    let d = exact_l2(&walsh_expand(&f, SampleMode::Decoupled).unwrap());
    assert_eq!(c, d);
}
