//! Monte-Carlo estimation engine, paired-estimate verdicts and the probe
//! reports emitted by every inequality check.

mod analytic;
mod nonmult;
mod probes;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::banach::{NormTarget, PhiFunctional};
use crate::chaos::evaluate_unchecked;
use crate::error::{Error, Result};
use crate::multiindex::CoefficientFamily;
use crate::numeric::Welford;
use crate::randsource::{sample_matrix, DistributionSpec, SampleMode, StreamKey};

pub use analytic::{
    check_shyp_down, compute_a_constant, counterexample_excess, mc_a_constant, probe_counterexample_linf2,
    shyp_down_sides, ShypDownRow,
};
pub use nonmult::{
    nonmultiplicative_l2_sides, stated_constant, probe_nonmultiplicative_l2, BaseLaw, FTable, FamilyKind,
};
pub use probes::{
    divergence_curve, index_average_curve, probe_contraction, probe_divergence_sup, probe_index_average_failure,
    probe_lower_decoupling, probe_lower_decoupling_scan, probe_symmetrization, probe_tail_comparison,
    probe_upper_reduction, DivergencePoint, FactorizedMultiplier, IndexAveragePoint, Multipliers, TailComparison,
    VectorFamily,
};

/// Monte-Carlo run parameters.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct McConfig {
    pub replicates: usize,
    pub seed: u64,
    pub batch: usize,
    pub confidence: f64,
}

impl McConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            batch: 4096,
            confidence: 0.99,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::InvalidParameter(format!(
                "at least 100 replicates required, got {}",
                self.replicates
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidParameter(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        Ok(())
    }

    /// Two-sided normal quantile for the configured confidence.
    pub fn z(&self) -> f64 {
        z_for(self.confidence)
    }
}

pub fn z_for(confidence: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

/// A sample mean with its standard error.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    #[serde(rename = "M")]
    pub m: usize,
}

impl Estimate {
    /// An exactly known value.
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            se: 0.0,
            m: 0,
        }
    }

    pub fn from_welford(w: &Welford) -> Self {
        Self {
            mean: w.mean(),
            se: w.std_err(),
            m: w.count() as usize,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// Judges the claim `lhs ≤ rhs`: violated only when the confidence
    /// intervals separate in the wrong direction.
    pub fn judge(lhs: &Estimate, rhs: &Estimate, z: f64) -> Self {
        if lhs.mean - z * lhs.se > rhs.mean + z * rhs.se {
            Verdict::Violated
        } else if lhs.mean > rhs.mean {
            Verdict::Inconclusive
        } else {
            Verdict::Consistent
        }
    }

    /// Judges the claim `lhs ≥ rhs`.
    pub fn judge_reversed(lhs: &Estimate, rhs: &Estimate, z: f64) -> Self {
        Self::judge(rhs, lhs, z)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Consistent => "consistent",
            Self::Violated => "violated",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// Whether the probed inequality is expected to hold or to fail.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Holds,
    Fails,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Consistent,
    ViolatedAsExpected,
    UnexpectedViolation,
    NotViolated,
    Inconclusive,
}

impl Outcome {
    pub fn from_verdict(expectation: Expectation, verdict: Verdict) -> Self {
        match (expectation, verdict) {
            (Expectation::Holds, Verdict::Consistent) => Self::Consistent,
            (Expectation::Holds, Verdict::Violated) => Self::UnexpectedViolation,
            (Expectation::Holds, Verdict::Inconclusive) => Self::Inconclusive,
            (Expectation::Fails, Verdict::Violated) => Self::ViolatedAsExpected,
            (Expectation::Fails, _) => Self::NotViolated,
        }
    }

    /// The outcome the probe's expectation flag asks for.
    pub fn is_expected(self) -> bool {
        matches!(self, Self::Consistent | Self::ViolatedAsExpected)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Consistent => "consistent",
            Self::ViolatedAsExpected => "violated-as-expected",
            Self::UnexpectedViolation => "unexpected-violation",
            Self::NotViolated => "not-violated",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// One point of a reported curve.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub values: BTreeMap<String, f64>,
}

impl CurvePoint {
    pub fn new(x: f64, values: impl IntoIterator<Item = (&'static str, f64)>) -> Self {
        Self {
            x,
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Paired left/right estimates for one inequality and the resulting verdict.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: String,
    pub tag: String,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `rhs.mean / lhs.mean`, absent when `lhs.mean = 0`.
    pub ratio: Option<f64>,
    pub verdict: Verdict,
    pub expectation: Expectation,
    pub outcome: Outcome,
    pub seed: u64,
    #[serde(rename = "M")]
    pub replicates: usize,
    pub confidence: f64,
    pub parameters: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ProbeReport {
    /// Builds a report for the claim `lhs ≤ rhs`.
    pub fn paired(
        probe: &str,
        tag: &str,
        lhs: Estimate,
        rhs: Estimate,
        expectation: Expectation,
        cfg: &McConfig,
    ) -> Self {
        let verdict = Verdict::judge(&lhs, &rhs, cfg.z());
        Self::with_verdict(probe, tag, lhs, rhs, verdict, expectation, cfg)
    }

    pub fn with_verdict(
        probe: &str,
        tag: &str,
        lhs: Estimate,
        rhs: Estimate,
        verdict: Verdict,
        expectation: Expectation,
        cfg: &McConfig,
    ) -> Self {
        Self {
            probe: probe.to_string(),
            tag: tag.to_string(),
            lhs,
            rhs,
            ratio: (lhs.mean != 0.0).then(|| rhs.mean / lhs.mean),
            verdict,
            expectation,
            outcome: Outcome::from_verdict(expectation, verdict),
            seed: cfg.seed,
            replicates: cfg.replicates,
            confidence: cfg.confidence,
            parameters: BTreeMap::new(),
            curve: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// A report whose sides are computed exactly rather than sampled.
    pub fn exact(probe: &str, tag: &str, lhs: Estimate, rhs: Estimate, verdict: Verdict, expectation: Expectation) -> Self {
        let cfg = McConfig {
            replicates: 0,
            seed: 0,
            batch: 1,
            confidence: 1.0,
        };
        Self::with_verdict(probe, tag, lhs, rhs, verdict, expectation, &cfg)
    }

    pub fn param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports are always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// `probe, lhs_mean, lhs_se, rhs_mean, rhs_se, ratio, verdict, seed, M`.
    pub fn csv_record(&self) -> [String; 9] {
        [
            self.probe.clone(),
            format!("{:e}", self.lhs.mean),
            format!("{:e}", self.lhs.se),
            format!("{:e}", self.rhs.mean),
            format!("{:e}", self.rhs.se),
            self.ratio.map_or_else(String::new, |r| format!("{r:e}")),
            self.outcome.to_string(),
            self.seed.to_string(),
            self.replicates.to_string(),
        ]
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "probe", "lhs_mean", "lhs_se", "rhs_mean", "rhs_se", "ratio", "verdict", "seed", "M",
];

/// Runs `run_batch(start, end)` over consecutive replicate batches on up to
/// `available_parallelism` threads. Results come back in batch order, so any
/// reduction over them is independent of the thread count.
pub(crate) fn run_batches<T: Send>(cfg: &McConfig, run_batch: impl Fn(usize, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    cfg.validate()?;
    let bounds: Vec<(usize, usize)> = (0..cfg.replicates)
        .step_by(cfg.batch)
        .map(|s| (s, (s + cfg.batch).min(cfg.replicates)))
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(bounds.len());
    if threads <= 1 {
        return bounds.iter().map(|&(s, e)| run_batch(s, e)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<T>>>> = bounds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(s, e)) = bounds.get(i) else { break };
                let result = run_batch(s, e);
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap_or_else(|p| p.into_inner()).expect("every batch ran"))
        .collect()
}

/// Runs `draw` once per replicate on its own substream and accumulates the
/// values batch by batch; batches are merged in replicate order, so the
/// result depends only on the configuration.
pub fn mc_estimate(cfg: &McConfig, domain: u64, draw: impl Fn(StreamKey) -> Result<f64> + Sync) -> Result<Estimate> {
    let base = StreamKey::new(cfg.seed, domain);
    let batches = run_batches(cfg, |start, end| {
        let mut batch = Welford::default();
        for m in start..end {
            let v = draw(base.replicate(m as u64))?;
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite replicate value at {m}")));
            }
            batch.push(v);
        }
        Ok(batch)
    })?;
    let mut total = Welford::default();
    for b in &batches {
        total.merge(b);
    }
    Ok(Estimate::from_welford(&total))
}

/// Stream domain used by [`mc_modular`].
pub const DOMAIN_MODULAR: u64 = 1;

/// `E φ(‖⟪f X^⊗⟫‖)` by Monte Carlo.
pub fn mc_modular(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    mode: SampleMode,
    phi: &PhiFunctional,
    target: &NormTarget,
    cfg: &McConfig,
) -> Result<Estimate> {
    mc_modular_in_domain(f, spec, mode, phi, target, cfg, DOMAIN_MODULAR)
}

pub fn mc_modular_in_domain(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    mode: SampleMode,
    phi: &PhiFunctional,
    target: &NormTarget,
    cfg: &McConfig,
    domain: u64,
) -> Result<Estimate> {
    spec.validate()?;
    check_target(f, target)?;
    let cols = f.max_coord_used();
    mc_estimate(cfg, domain, |key| {
        let x = sample_matrix(spec, f.n(), cols, mode, key)?;
        Ok(phi.eval(target.norm(&evaluate_unchecked(f, &x))?))
    })
}

pub(crate) fn check_target(f: &CoefficientFamily, target: &NormTarget) -> Result<()> {
    if target.dim() != f.dim() {
        return Err(Error::LengthMismatch {
            expected: f.dim(),
            got: target.dim(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::exact_modular;
    use crate::multiindex::MultiIndex;

    fn l2(d: usize) -> NormTarget {
        NormTarget::lp(d, 2.0).unwrap()
    }

    #[test]
    fn constant_family_has_zero_error() {
        let mut f = CoefficientFamily::new(2, 2, 2).unwrap();
        f.set_empty_term(vec![3.0, 4.0]).unwrap();
        let e = mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &PhiFunctional::Power(2.0), &l2(2), &McConfig::new(200, 1)).unwrap();
        assert_eq!(e.mean, 25.0);
        assert_eq!(e.se, 0.0);
        assert_eq!(e.m, 200);
    }

    #[test]
    fn rademacher_matches_enumeration() {
        let mut f = CoefficientFamily::new(2, 3, 1).unwrap();
        let a = MultiIndex::from_slots(2, &[1, 2]).unwrap();
        f.insert(a, vec![1, 2], vec![1.0]).unwrap();
        f.insert(a, vec![3, 1], vec![-0.5]).unwrap();
        f.insert(MultiIndex::from_slots(2, &[2]).unwrap(), vec![2], vec![0.75]).unwrap();
        let phi = PhiFunctional::Power(1.5);
        for mode in [SampleMode::Coupled, SampleMode::Decoupled] {
            let exact = exact_modular(&f, mode, &phi, &l2(1)).unwrap();
            let e = mc_modular(&f, &DistributionSpec::Rademacher, mode, &phi, &l2(1), &McConfig::new(20_000, 3)).unwrap();
            assert!((e.mean - exact).abs() < 3.0 * e.se, "{mode}: {} vs {exact}", e.mean);
        }
    }

    #[test]
    fn gaussian_linear_isometry() {
        let mut f = CoefficientFamily::new(1, 3, 2).unwrap();
        let a = MultiIndex::from_slots(1, &[1]).unwrap();
        let coefs = [[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]];
        for (i, c) in coefs.iter().enumerate() {
            f.insert(a, vec![i as u32 + 1], c.to_vec()).unwrap();
        }
        let want: f64 = coefs.iter().flatten().map(|x| x * x).sum();
        let e = mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &PhiFunctional::Power(2.0), &l2(2), &McConfig::new(50_000, 5)).unwrap();
        assert!((e.mean - want).abs() < 3.0 * e.se);
    }

    #[test]
    fn stderr_halves_with_quadrupled_replicates() {
        let mut f = CoefficientFamily::new(1, 1, 1).unwrap();
        f.insert(MultiIndex::from_slots(1, &[1]).unwrap(), vec![1], vec![1.0]).unwrap();
        let run = |m| {
            mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &PhiFunctional::Power(2.0), &l2(1), &McConfig::new(m, 11))
                .unwrap()
                .se
        };
        let ratio = run(20_000) / run(40_000);
        assert!((1.25..=1.6).contains(&ratio), "{ratio}");
    }

    #[test]
    fn determinism_and_batch_shape() {
        let mut f = CoefficientFamily::new(1, 2, 1).unwrap();
        f.insert(MultiIndex::from_slots(1, &[1]).unwrap(), vec![2], vec![1.0]).unwrap();
        let cfg = McConfig::new(1000, 9);
        let phi = PhiFunctional::Power(2.0);
        let a = mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &phi, &l2(1), &cfg).unwrap();
        let b = mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &phi, &l2(1), &cfg).unwrap();
        assert_eq!(a, b);
        let c = mc_modular(&f, &DistributionSpec::Gaussian, SampleMode::Coupled, &phi, &l2(1), &McConfig { batch: 7, ..cfg }).unwrap();
        assert!((a.mean - c.mean).abs() < 1e-12 * a.mean.abs().max(1.0));
        assert!(McConfig::new(99, 1).validate().is_err());
    }

    #[test]
    fn verdict_rule() {
        let z = McConfig::new(100, 0).z();
        assert!((z - 2.5758293).abs() < 1e-6);
        let e = |mean, se| Estimate { mean, se, m: 100 };
        assert_eq!(Verdict::judge(&e(1.0, 0.1), &e(2.0, 0.1), z), Verdict::Consistent);
        assert_eq!(Verdict::judge(&e(2.0, 0.1), &e(1.0, 0.1), z), Verdict::Violated);
        assert_eq!(Verdict::judge(&e(1.1, 0.1), &e(1.0, 0.1), z), Verdict::Inconclusive);
        for (a, b) in [(e(1.0, 0.1), e(2.0, 0.1)), (e(2.0, 0.1), e(1.0, 0.2)), (e(1.1, 0.1), e(1.0, 0.1))] {
            assert_eq!(Verdict::judge(&a, &b, z), Verdict::judge_reversed(&b, &a, z));
        }
    }

    #[test]
    fn report_json_round_trip() {
        let cfg = McConfig::new(100, 4);
        let r = ProbeReport::paired("demo", "demo-tag", Estimate::exact(1.0), Estimate::exact(2.0), Expectation::Holds, &cfg)
            .param("spec", "gaussian")
            .note("hello");
        assert_eq!(r.outcome, Outcome::Consistent);
        let back = ProbeReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_record()[6], "consistent");
    }
}
