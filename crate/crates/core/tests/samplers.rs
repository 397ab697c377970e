use decoupling_core::numeric::Welford;
use decoupling_core::randsource::{ecf, sample_sequence, DistributionSpec, StreamKey};

fn draws(spec: &DistributionSpec, m: usize, seed: u64) -> Vec<f64> {
    sample_sequence(spec, m, &mut StreamKey::new(seed, 99).rng()).unwrap()
}

/// Checks an empirical tail frequency against its exact value within 3
/// binomial standard errors.
fn assert_tail(sample: &[f64], t: f64, want: f64) {
    let m = sample.len() as f64;
    let got = sample.iter().filter(|x| x.abs() > t).count() as f64 / m;
    let se = (want * (1.0 - want) / m).sqrt();
    assert!((got - want).abs() <= 3.0 * se, "t={t}: {got} vs {want} (se {se})");
}

#[test]
fn pareto_tails() {
    for alpha in [0.8, 1.5] {
        let s = draws(&DistributionSpec::ParetoSap(alpha), 200_000, 1);
        for t in [2.0, 5.0] {
            assert_tail(&s, t, f64::powf(t, -alpha));
        }
    }
}

#[test]
fn log_squared_tails() {
    let s = draws(&DistributionSpec::LogSquaredTail, 200_000, 2);
    assert!(s.iter().all(|x| x.abs() >= std::f64::consts::E - 1e-12));
    for t in [std::f64::consts::E + 1e-9, 10.0, 100.0] {
        assert_tail(&s, t, 1.0 / (t * t.ln().powi(2)));
    }
}

#[test]
fn gaussian_and_gamma_moments() {
    let mut w = Welford::default();
    draws(&DistributionSpec::Gaussian, 100_000, 3).iter().for_each(|x| w.push(x * x));
    assert!((w.mean() - 1.0).abs() < 3.0 * w.std_err());
    // Symmetrized Gamma(m, 1): E X² = m(m + 1).
    let mut w = Welford::default();
    draws(&DistributionSpec::SymmetrizedGamma(3), 100_000, 4).iter().for_each(|x| w.push(x * x));
    assert!((w.mean() - 12.0).abs() < 3.0 * w.std_err(), "{}", w.mean());
}

#[test]
fn product_and_sum_combinators() {
    let prod: DistributionSpec = "prod(rademacher, gaussian)".parse().unwrap();
    let mut w = Welford::default();
    draws(&prod, 100_000, 5).iter().for_each(|x| w.push(x * x));
    assert!((w.mean() - 1.0).abs() < 3.0 * w.std_err());
    let sum: DistributionSpec = "sum(gaussian, gaussian)".parse().unwrap();
    let mut w = Welford::default();
    draws(&sum, 100_000, 6).iter().for_each(|x| w.push(x * x));
    assert!((w.mean() - 2.0).abs() < 3.0 * w.std_err());
}

#[test]
fn stable_characteristic_function() {
    let grid: Vec<f64> = (0..=20).map(|j| j as f64 * 0.2).collect();
    for alpha in [0.8, 1.7] {
        let s = draws(&DistributionSpec::StableSas(alpha), 200_000, 7);
        let got = ecf(&s, &grid).unwrap();
        for (t, g) in grid.iter().zip(got) {
            assert!((g - (-t.powf(alpha)).exp()).abs() < 0.012, "α={alpha} t={t}: {g}");
        }
    }
}
