use std::collections::BTreeMap;

use decoupling_core::banach::{NormTarget, PhiFunctional};
use decoupling_core::multiindex::{CoefficientFamily, MultiIndex};
use decoupling_core::randsource::{DistributionSpec, SampleMode, StreamKey};
use decoupling_core::verify::{
    check_shyp_down, compute_a_constant, divergence_curve, index_average_curve, probe_contraction,
    probe_counterexample_linf2, probe_lower_decoupling, probe_symmetrization, probe_tail_comparison,
    probe_upper_reduction, FactorizedMultiplier, McConfig, Outcome, VectorFamily,
};
use decoupling_core::Error;

fn degree_two_family(coords: u32) -> CoefficientFamily {
    let mut f = CoefficientFamily::new(2, coords as usize, 1).unwrap();
    let full = MultiIndex::full(2).unwrap();
    for i in 1..=coords {
        for j in 1..=coords {
            if i != j {
                f.insert(full, vec![i, j], vec![1.0 / (i + j) as f64]).unwrap();
            }
        }
    }
    f
}

fn l2(d: usize) -> NormTarget {
    NormTarget::lp(d, 2.0).unwrap()
}

#[test]
fn degree_one_lower_decoupling_is_consistent() {
    let mut f = CoefficientFamily::new(1, 3, 1).unwrap();
    let a = MultiIndex::full(1).unwrap();
    for i in 1..=3u32 {
        f.insert(a, vec![i], vec![i as f64]).unwrap();
    }
    let r = probe_lower_decoupling(&f, &DistributionSpec::Gaussian, &PhiFunctional::Power(2.0), &l2(1), None, &McConfig::new(2000, 1)).unwrap();
    assert_eq!(r.outcome, Outcome::Consistent);
    // h_1 = 2c_φ = 8 scales the right side by 64 under φ = t².
    let ratio = r.ratio.unwrap();
    assert!((ratio / 64.0 - 1.0).abs() < 0.15, "{ratio}");
}

#[test]
fn lower_decoupling_rejects_weak_phi() {
    let f = degree_two_family(3);
    let err = probe_lower_decoupling(&f, &DistributionSpec::Gaussian, &PhiFunctional::Power(1.0), &l2(1), None, &McConfig::new(200, 1));
    assert!(err.is_err());
}

#[test]
fn contraction_half_factors_is_equality_in_law() {
    let f = degree_two_family(3);
    let g = FactorizedMultiplier::constant([2], 3, 0.5).unwrap();
    let r = probe_contraction(&f, &g, &DistributionSpec::Rademacher, SampleMode::Coupled, &PhiFunctional::Power(1.5), &l2(1), &McConfig::new(100, 1)).unwrap();
    assert_eq!(r.lhs.se, 0.0);
    assert!((r.lhs.mean - r.rhs.mean).abs() < 1e-12);
    assert_eq!(r.outcome, Outcome::Consistent);
}

#[test]
fn contraction_random_factors_gaussian() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let f = degree_two_family(4);
    let factors: BTreeMap<usize, Vec<Vec<f64>>> =
        [(2, (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect())].into_iter().collect();
    let g = FactorizedMultiplier::from_factors(factors).unwrap();
    let r = probe_contraction(&f, &g, &DistributionSpec::Gaussian, SampleMode::Coupled, &PhiFunctional::Power(2.0), &l2(1), &McConfig::new(20_000, 4)).unwrap();
    assert_eq!(r.outcome, Outcome::Consistent);
}

#[test]
fn symmetrization_triple_gaussian() {
    let f = degree_two_family(3);
    let reports = probe_symmetrization(&f, &DistributionSpec::Gaussian, &PhiFunctional::Power(2.0), &l2(1), &McConfig::new(20_000, 6)).unwrap();
    for r in &reports {
        assert_eq!(r.outcome, Outcome::Consistent, "{}", r.probe);
    }
    let err = probe_symmetrization(&f, &DistributionSpec::StableSas(0.8), &PhiFunctional::Power(2.0), &l2(1), &McConfig::new(200, 6));
    assert!(matches!(err, Err(Error::InvalidParameter(_))));
}

#[test]
fn identical_tails_give_unit_constant() {
    let f = degree_two_family(3);
    let spec = DistributionSpec::ParetoSap(1.5);
    let (report, tails) = probe_tail_comparison(&f, &spec, &spec, SampleMode::Decoupled, &McConfig::new(50_000, 2)).unwrap();
    assert!(tails.k.is_finite());
    for p in &report.curve {
        let v = &p.values;
        let noise = (v["left_se"].powi(2) + v["right_se"].powi(2)).sqrt();
        assert!((v["left"] - v["right"]).abs() <= 3.0 * noise, "level {}: {v:?}", p.x);
    }
}

#[test]
fn upper_reduction_single_rademacher_vector() {
    let v = VectorFamily::new(vec![1.0, 0.0], vec![vec![0.3, 0.7]]).unwrap();
    let r = probe_upper_reduction(&v, &DistributionSpec::Rademacher, &PhiFunctional::Power(2.0), &l2(2), 4, &McConfig::new(5000, 3)).unwrap();
    assert_eq!(r.parameters["smallest_consistent_constant"], 1.0);
}

#[test]
fn upper_reduction_gaussian_l2() {
    let v = VectorFamily::random(4, 3, StreamKey::new(9, 0)).unwrap();
    let r = probe_upper_reduction(&v, &DistributionSpec::Gaussian, &PhiFunctional::Power(2.0), &l2(4), 4, &McConfig::new(20_000, 3)).unwrap();
    assert_eq!(r.outcome, Outcome::Consistent);
}

#[test]
fn upper_reduction_stable_linf() {
    let v = VectorFamily::random(4, 3, StreamKey::new(2, 0)).unwrap();
    let linf: NormTarget = "linf:4".parse().unwrap();
    let r = probe_upper_reduction(&v, &DistributionSpec::StableSas(0.8), &PhiFunctional::Power(0.5), &linf, 16, &McConfig::new(20_000, 3)).unwrap();
    assert_eq!(r.outcome, Outcome::Consistent);
}

#[test]
fn counterexample_small_u_ratio_is_moderate() {
    let r = probe_counterexample_linf2(&[0.05, 0.1], 1.0).unwrap();
    for p in &r.curve {
        let ratio = p.values["ratio"];
        assert!(ratio > 0.1 && ratio < 10.0, "u={} ratio={ratio}", p.x);
    }
}

#[test]
fn a_constant_small_s_is_reported() {
    let a = compute_a_constant(1.5, 1e-3).unwrap();
    assert!(a.is_finite() && a > 0.0);
}

#[test]
fn shyp_down_grid() {
    let grid: Vec<f64> = (1..=20).map(|j| j as f64 / 20.0).collect();
    let (report, rows) = check_shyp_down(1.5, 1.0, &grid).unwrap();
    assert!(rows.iter().all(|r| r.holds));
    assert_eq!(report.outcome, Outcome::Consistent);
}

#[test]
fn divergence_first_point_is_mean_absolute_value() {
    let curve = divergence_curve(&DistributionSpec::Gaussian, &[1, 8], &McConfig::new(40_000, 1)).unwrap();
    let want = (2.0 / std::f64::consts::PI).sqrt();
    assert!((curve[0].value.mean - want).abs() < 3.0 * curve[0].value.se);
}

#[test]
fn index_average_unit_length_matches_plain_gaussian() {
    let v = VectorFamily::new(vec![1.0, 0.0], vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
    let curve = index_average_curve(&v, &DistributionSpec::Gaussian, &PhiFunctional::Power(2.0), &l2(2), 1.0, &[1], &McConfig::new(20_000, 5)).unwrap();
    // ‖x‖² + Σ‖x_i‖² = 1 + 0.5 + 1.
    assert!((curve[0].averaged.mean - 2.5).abs() < 3.0 * curve[0].averaged.se);
}

#[test]
fn index_average_accepts_lengths_beyond_slot_limit() {
    let v = VectorFamily::new(vec![1.0], vec![vec![1.0]]).unwrap();
    let curve = index_average_curve(&v, &DistributionSpec::Gaussian, &PhiFunctional::Power(2.0), &l2(1), 1.0, &[100], &McConfig::new(20_000, 5)).unwrap();
    // 1 + 1/100.
    assert!((curve[0].averaged.mean - 1.01).abs() < 3.0 * curve[0].averaged.se);
}
