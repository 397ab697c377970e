use std::collections::BTreeMap;

use rand::Rng;

use super::{check_target, mc_estimate, CurvePoint, Estimate, Expectation, McConfig, ProbeReport, Verdict};
use crate::banach::{lower_multiplier, strong_convexity_constant, NormTarget, PhiFunctional};
use crate::chaos::{evaluate_unchecked, exact_modular};
use crate::error::{Error, Result};
use crate::multiindex::{CoefficientFamily, MultiIndex};
use crate::numeric::Welford;
use crate::randsource::{
    random_sign, sample_matrix, sample_sequence, walsh, DistributionSpec, SampleMatrix, SampleMode, StreamKey, WalshAssignment,
};

const DOMAIN_LEFT: u64 = 11;
const DOMAIN_RIGHT: u64 = 12;
const DOMAIN_LEFT_COPY: u64 = 13;
const DOMAIN_SIGNS: u64 = 14;

/// Degree-indexed constants multiplying the coupled side.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Multipliers {
    /// `h_k = (2ck)^k / k!`.
    LowerH { c: f64 },
    /// `d^k`.
    Exponential { d: f64 },
}

impl Multipliers {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Self::LowerH { c } => lower_multiplier(k, c),
            Self::Exponential { d } => d.powi(k as i32),
        }
    }
}

/// Sub-families grouped by a key of each `α`; the empty term lands in the
/// group of `∅`.
fn split_by<K: Ord + Copy>(f: &CoefficientFamily, key: impl Fn(MultiIndex) -> K) -> Result<Vec<(K, CoefficientFamily)>> {
    let mut parts: BTreeMap<K, CoefficientFamily> = BTreeMap::new();
    let new_part = || CoefficientFamily::new(f.n(), f.coord_bound(), f.dim());
    if f.empty_term().iter().any(|&v| v != 0.0) {
        let mut part = new_part()?;
        part.set_empty_term(f.empty_term().to_vec())?;
        parts.insert(key(MultiIndex::empty(f.n())?), part);
    }
    for (alpha, tuple, value) in f.entries() {
        let part = match parts.entry(key(alpha)) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(new_part()?),
        };
        part.insert(alpha, tuple.clone(), value.to_vec())?;
    }
    Ok(parts.into_iter().collect())
}

fn eval_parts<K>(parts: &[(K, CoefficientFamily)], x: &SampleMatrix) -> Vec<Vec<f64>> {
    parts.iter().map(|(_, p)| evaluate_unchecked(p, x)).collect()
}

fn combine(dim: usize, terms: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (w, v) in terms {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

fn difference(a: &SampleMatrix, b: &SampleMatrix) -> Result<SampleMatrix> {
    let rows = (0..a.rows())
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| x - y).collect())
        .collect();
    SampleMatrix::from_rows(a.mode(), rows)
}

fn require_symmetric(f: &CoefficientFamily) -> Result<()> {
    if f.is_symmetric() {
        Ok(())
    } else {
        Err(Error::InvalidParameter("probe requires a symmetric coefficient family".into()))
    }
}

/// Runs one pass over the replicates and feeds `count` values per replicate
/// into separate accumulators.
fn mc_estimate_many(
    cfg: &McConfig,
    count: usize,
    draw: impl Fn(u64, &mut [f64]) -> Result<()> + Sync,
) -> Result<Vec<Estimate>> {
    let batches = super::run_batches(cfg, |start, end| {
        let mut values = vec![0.0; count];
        let mut batch = vec![Welford::default(); count];
        for m in start..end {
            draw(m as u64, &mut values)?;
            for (b, &v) in batch.iter_mut().zip(&values) {
                if !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite replicate value at {m}")));
                }
                b.push(v);
            }
        }
        Ok(batch)
    })?;
    let mut acc = vec![Welford::default(); count];
    for batch in &batches {
        for (a, b) in acc.iter_mut().zip(batch) {
            a.merge(b);
        }
    }
    Ok(acc.iter().map(Estimate::from_welford).collect())
}

fn spec_params(report: ProbeReport, spec: &DistributionSpec, phi: &PhiFunctional, target: &NormTarget) -> ProbeReport {
    report
        .param("spec", spec.to_string())
        .param("phi", phi.to_string())
        .param("target", target.to_string())
}

type DegreeParts = Vec<(usize, CoefficientFamily)>;
type SideValues = (Vec<f64>, Vec<Vec<f64>>);

/// Per-degree parts of `f` evaluated on a decoupled and a coupled matrix.
/// Every supported law is symmetric, so the Walsh multipliers `w_k` are
/// omitted.
fn lower_sides(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    target: &NormTarget,
    cfg: &McConfig,
) -> Result<(DegreeParts, impl Fn(u64) -> Result<SideValues>)> {
    spec.validate()?;
    check_target(f, target)?;
    require_symmetric(f)?;
    let parts = split_by(f, |a| a.card())?;
    let cols = f.max_coord_used();
    let n = f.n();
    let dim = f.dim();
    let left_key = StreamKey::new(cfg.seed, DOMAIN_LEFT);
    let right_key = StreamKey::new(cfg.seed, DOMAIN_RIGHT);
    let spec = spec.clone();
    let parts_for_draw = parts.clone();
    let draw = move |m: u64| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let xd = sample_matrix(&spec, n, cols, SampleMode::Decoupled, left_key.replicate(m))?;
        let xc = sample_matrix(&spec, n, cols, SampleMode::Coupled, right_key.replicate(m))?;
        let left = combine(dim, eval_parts(&parts_for_draw, &xd).into_iter().map(|v| (1.0, v)));
        Ok((left, eval_parts(&parts_for_draw, &xc)))
    };
    Ok((parts, draw))
}

/// `E φ(‖Σ_k ⟨f_k 𝕏^{⊗k}⟩‖) ≤ E φ(‖Σ_k h_k ⟨f_k X^{⊗k}⟩‖)` with a decoupled
/// matrix on the left and a coupled one on the right. The multipliers
/// default to `h_k` with `c = c_φ`.
pub fn probe_lower_decoupling(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    multipliers: Option<Multipliers>,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    let c_phi = strong_convexity_constant(phi)?;
    let mult = multipliers.unwrap_or(Multipliers::LowerH { c: c_phi });
    let (parts, draw) = lower_sides(f, spec, target, cfg)?;
    let weights: Vec<f64> = parts.iter().map(|(k, _)| mult.at(*k)).collect();
    let est = mc_estimate_many(cfg, 2, |m, out| {
        let (left, right_parts) = draw(m)?;
        let right = combine(f.dim(), weights.iter().copied().zip(right_parts));
        out[0] = phi.eval(target.norm(&left)?);
        out[1] = phi.eval(target.norm(&right)?);
        Ok(())
    })?;
    let report = ProbeReport::paired(
        "lower-decoupling",
        "sign-randomized-weak-lower-decoupling",
        est[0],
        est[1],
        Expectation::Holds,
        cfg,
    );
    Ok(spec_params(report, spec, phi, target)
        .param("c_phi", c_phi)
        .param("multipliers", format!("{mult:?}"))
        .param("degrees", parts.iter().map(|(k, _)| *k).collect::<Vec<_>>()))
}

/// Scans exponential multipliers `d = 2^{j/4}`, `j = 0..=max_j`, and reports
/// the smallest `d` at which the lower decoupling inequality is consistent.
pub fn probe_lower_decoupling_scan(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    max_j: u32,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    let (parts, draw) = lower_sides(f, spec, target, cfg)?;
    let grid: Vec<f64> = (0..=max_j).map(|j| 2f64.powf(j as f64 / 4.0)).collect();
    let est = mc_estimate_many(cfg, 1 + grid.len(), |m, out| {
        let (left, right_parts) = draw(m)?;
        out[0] = phi.eval(target.norm(&left)?);
        for (slot, &d) in out[1..].iter_mut().zip(&grid) {
            let terms = parts
                .iter()
                .zip(&right_parts)
                .map(|((k, _), v)| (d.powi(*k as i32), v.clone()));
            *slot = phi.eval(target.norm(&combine(f.dim(), terms))?);
        }
        Ok(())
    })?;
    scan_report(
        "lower-decoupling-scan",
        "lower-decoupling-exponential-constant",
        est[0],
        &grid,
        &est[1..],
        cfg,
    )
    .map(|r| spec_params(r, spec, phi, target))
}

fn scan_report(probe: &str, tag: &str, lhs: Estimate, grid: &[f64], rhs: &[Estimate], cfg: &McConfig) -> Result<ProbeReport> {
    let z = cfg.z();
    let verdicts: Vec<Verdict> = rhs.iter().map(|r| Verdict::judge(&lhs, r, z)).collect();
    let first = verdicts.iter().position(|v| *v == Verdict::Consistent);
    let pick = first.unwrap_or(grid.len() - 1);
    let mut report = ProbeReport::with_verdict(probe, tag, lhs, rhs[pick], verdicts[pick], Expectation::Holds, cfg);
    report.curve = grid
        .iter()
        .zip(rhs)
        .zip(&verdicts)
        .map(|((&c, r), v)| {
            CurvePoint::new(
                c,
                [
                    ("rhs_mean", r.mean),
                    ("rhs_se", r.se),
                    ("margin", r.mean + z * r.se - (lhs.mean - z * lhs.se)),
                    ("consistent", f64::from(u8::from(*v == Verdict::Consistent))),
                ],
            )
        })
        .collect();
    Ok(match first {
        Some(i) => report.param("smallest_consistent_constant", grid[i]),
        None => report.note("no grid constant was consistent"),
    })
}

/// The three symmetrization inequalities with factors 1, 2 and 4:
///
/// * `Φ(⟪f (𝕏 − E𝕏)^⊗⟫) ≤ Φ(⟪f (𝕏 − 𝕏′)^⊗⟫)`,
/// * `Φ(⟪f (𝕏 − 𝕏′)^⊗⟫) ≤ Φ(⟪f w (2𝕏)^⊗⟫)`,
/// * `Φ(⟪f (X − X′)^⊗⟫) ≤ Φ(⟪f w (4X)^⊗⟫)` for coupled sequences,
///
/// where `w_α = (-1)^{|α∩β|}` with `β` uniform per replicate.
pub fn probe_symmetrization(
    f: &CoefficientFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    cfg: &McConfig,
) -> Result<[ProbeReport; 3]> {
    spec.validate()?;
    check_target(f, target)?;
    require_symmetric(f)?;
    if !spec.is_integrable() {
        return Err(Error::InvalidParameter(format!(
            "symmetrization needs an integrable law, {spec} has no mean"
        )));
    }
    let parts = split_by(f, |a| a)?;
    let (n, cols, dim) = (f.n(), f.max_coord_used(), f.dim());
    let mask = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let norm = |v: &[f64]| -> Result<f64> { Ok(phi.eval(target.norm(v)?)) };
    let walsh_scaled = |x: &SampleMatrix, factor: f64, m: u64| -> Result<Vec<f64>> {
        let beta = WalshAssignment(MultiIndex::new(n, StreamKey::new(cfg.seed, DOMAIN_SIGNS).replicate(m).rng().random::<u32>() & mask)?);
        let values = eval_parts(&parts, x);
        let mut terms = Vec::with_capacity(parts.len());
        for ((alpha, _), v) in parts.iter().zip(values) {
            terms.push((f64::from(walsh(*alpha, beta)?) * factor.powi(alpha.card() as i32), v));
        }
        Ok(combine(dim, terms))
    };
    let sample = |mode, domain, m| sample_matrix(spec, n, cols, mode, StreamKey::new(cfg.seed, domain).replicate(m));
    let est = mc_estimate_many(cfg, 5, |m, out| {
        let xd = sample(SampleMode::Decoupled, DOMAIN_LEFT, m)?;
        let xd2 = sample(SampleMode::Decoupled, DOMAIN_LEFT_COPY, m)?;
        // Every supported law is symmetric, so X − E X = X.
        out[0] = norm(&evaluate_unchecked(f, &xd))?;
        out[1] = norm(&evaluate_unchecked(f, &difference(&xd, &xd2)?))?;
        let yd = sample(SampleMode::Decoupled, DOMAIN_RIGHT, m)?;
        out[2] = norm(&walsh_scaled(&yd, 2.0, m)?)?;
        let xc = sample(SampleMode::Coupled, DOMAIN_LEFT, m)?;
        let xc2 = sample(SampleMode::Coupled, DOMAIN_LEFT_COPY, m)?;
        out[3] = norm(&evaluate_unchecked(f, &difference(&xc, &xc2)?))?;
        let yc = sample(SampleMode::Coupled, DOMAIN_RIGHT, m)?;
        out[4] = norm(&walsh_scaled(&yc, 4.0, m)?)?;
        Ok(())
    })?;
    let make = |probe, tag, l: usize, r: usize, factor: u32| {
        spec_params(
            ProbeReport::paired(probe, tag, est[l], est[r], Expectation::Holds, cfg),
            spec,
            phi,
            target,
        )
        .param("factor", factor)
    };
    Ok([
        make("symmetrization-centering", "centering-by-independent-copy", 0, 1, 1),
        make("symmetrization-decoupled", "decoupled-symmetrization-walsh", 1, 2, 2),
        make("symmetrization-coupled", "coupled-symmetrization-walsh", 3, 4, 4),
    ])
}

/// A product-form multiplier `g_k(i) = Π_j g_{kj}(i_j)` per degree `k`.
#[derive(Clone, PartialEq, Debug)]
pub struct FactorizedMultiplier {
    /// `factors[k][j][i - 1] = g_{k,j+1}(i)`.
    factors: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl FactorizedMultiplier {
    pub fn from_factors(factors: BTreeMap<usize, Vec<Vec<f64>>>) -> Result<Self> {
        for (&k, per_slot) in &factors {
            if per_slot.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    got: per_slot.len(),
                });
            }
            if per_slot.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite multiplier at degree {k}")));
            }
        }
        Ok(Self { factors })
    }

    /// The same factor `g` in every slot of every degree in `degrees`.
    pub fn constant(degrees: impl IntoIterator<Item = usize>, coords: usize, g: f64) -> Result<Self> {
        Self::from_factors(
            degrees
                .into_iter()
                .map(|k| (k, vec![vec![g; coords]; k]))
                .collect(),
        )
    }

    /// Factorizes a full table `g_k` on `[1, coords]^k`, rejecting tables that
    /// are not a product of per-slot functions.
    pub fn from_table(k: usize, coords: usize, table: impl Fn(&[u32]) -> f64) -> Result<Self> {
        let tuples = all_tuples(k, coords);
        let values: Vec<f64> = tuples.iter().map(|t| table(t)).collect();
        let (pivot, &scale) = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or(Error::Empty)?;
        let mut per_slot = Vec::with_capacity(k);
        if scale == 0.0 {
            per_slot = vec![vec![0.0; coords]; k];
        } else {
            let base = &tuples[pivot];
            for j in 0..k {
                let mut factor = Vec::with_capacity(coords);
                for c in 1..=coords as u32 {
                    let mut t = base.clone();
                    t[j] = c;
                    let ratio = table(&t) / scale;
                    factor.push(if j == 0 { ratio * scale } else { ratio });
                }
                per_slot.push(factor);
            }
        }
        let out = Self::from_factors([(k, per_slot)].into_iter().collect())?;
        for (t, &v) in tuples.iter().zip(&values) {
            let got = out.value(k, t);
            if (got - v).abs() > 1e-12 * scale.abs().max(1.0) {
                return Err(Error::NotFactorized(format!("g_{k}{t:?} = {v} but the product of factors gives {got}")));
            }
        }
        Ok(out)
    }

    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors.keys().copied()
    }

    fn value(&self, k: usize, tuple: &[u32]) -> f64 {
        let per_slot = &self.factors[&k];
        tuple
            .iter()
            .zip(per_slot)
            .map(|(&i, factor)| factor.get(i as usize - 1).copied().unwrap_or(0.0))
            .product()
    }

    /// `c = sup |g_{kj}|`, so that `|g_k| ≤ c^k`.
    pub fn sup(&self) -> f64 {
        self.factors.values().flatten().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(f g)_α(i) = f_α(i) g_{|α|}(i)`.
    pub fn apply(&self, f: &CoefficientFamily) -> Result<CoefficientFamily> {
        let mut out = CoefficientFamily::new(f.n(), f.coord_bound(), f.dim())?;
        out.set_empty_term(f.empty_term().to_vec())?;
        for (alpha, tuple, value) in f.entries() {
            let k = alpha.card();
            if !self.factors.contains_key(&k) {
                return Err(Error::InvalidParameter(format!("no multiplier factors for degree {k}")));
            }
            let g = self.value(k, tuple.as_slice());
            out.insert(alpha, tuple.clone(), value.iter().map(|v| v * g).collect())?;
        }
        Ok(out)
    }
}

fn all_tuples(k: usize, coords: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                (1..=coords as u32).map(move |c| {
                    let mut t = t.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// Contraction principle `E φ(‖⟪f g X^⊗⟫‖) ≤ E φ(‖⟪f (cX)^⊗⟫‖)` with
/// `c = sup |g_{kj}|`. Rademacher laws are enumerated exactly.
pub fn probe_contraction(
    f: &CoefficientFamily,
    g: &FactorizedMultiplier,
    spec: &DistributionSpec,
    mode: SampleMode,
    phi: &PhiFunctional,
    target: &NormTarget,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    spec.validate()?;
    check_target(f, target)?;
    cfg.validate()?;
    let c = g.sup();
    let fg = g.apply(f)?;
    let fc = f.scale_by_degree(|k| c.powi(k as i32));
    let (lhs, rhs, method) = if spec.is_rademacher() {
        (
            Estimate::exact(exact_modular(&fg, mode, phi, target)?),
            Estimate::exact(exact_modular(&fc, mode, phi, target)?),
            "enumeration",
        )
    } else {
        (
            super::mc_modular_in_domain(&fg, spec, mode, phi, target, cfg, DOMAIN_LEFT)?,
            super::mc_modular_in_domain(&fc, spec, mode, phi, target, cfg, DOMAIN_RIGHT)?,
            "monte-carlo",
        )
    };
    let report = ProbeReport::paired("contraction", "contraction-principle", lhs, rhs, Expectation::Holds, cfg);
    Ok(spec_params(report, spec, phi, target)
        .param("c", c)
        .param("mode", mode.to_string())
        .param("method", method))
}

/// Quantile comparison of two chaoses built from the same family.
#[derive(Clone, PartialEq, Debug)]
pub struct TailComparison {
    /// `max` over the levels of `max(q_L/q_R, q_R/q_L)`.
    pub k: f64,
    /// `(level, left quantile, right quantile)`.
    pub quantiles: Vec<(f64, f64, f64)>,
}

const TAIL_LEVELS: [f64; 3] = [0.9, 0.99, 0.999];

fn sorted_abs_chaos(f: &CoefficientFamily, spec: &DistributionSpec, mode: SampleMode, cfg: &McConfig, domain: u64) -> Result<Vec<f64>> {
    let cols = f.max_coord_used();
    let base = StreamKey::new(cfg.seed, domain);
    let mut out = Vec::with_capacity(cfg.replicates);
    for m in 0..cfg.replicates {
        let x = sample_matrix(spec, f.n(), cols, mode, base.replicate(m as u64))?;
        let v = evaluate_unchecked(f, &x);
        out.push(v.iter().map(|t| t * t).sum::<f64>().sqrt());
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Type-1 empirical quantile and a standard error read off the binomial
/// order-statistic interval.
fn quantile_with_se(sorted: &[f64], p: f64, z: f64) -> Estimate {
    let m = sorted.len() as f64;
    let at = |pos: f64| sorted[(pos.ceil().max(1.0) as usize - 1).min(sorted.len() - 1)];
    let half = z * (m * p * (1.0 - p)).sqrt();
    let lo = at(m * p - half);
    let hi = at(m * p + half);
    Estimate {
        mean: at(m * p),
        se: (hi - lo) / (2.0 * z),
        m: sorted.len(),
    }
}

/// Empirical quantiles of `‖⟪f X^⊗⟫‖` under two laws at levels 0.9, 0.99
/// and 0.999; the report carries the smallest sandwich constant `K`.
pub fn probe_tail_comparison(
    f: &CoefficientFamily,
    left: &DistributionSpec,
    right: &DistributionSpec,
    mode: SampleMode,
    cfg: &McConfig,
) -> Result<(ProbeReport, TailComparison)> {
    cfg.validate()?;
    left.validate()?;
    right.validate()?;
    let z = cfg.z();
    let a = sorted_abs_chaos(f, left, mode, cfg, DOMAIN_LEFT)?;
    let b = sorted_abs_chaos(f, right, mode, cfg, DOMAIN_RIGHT)?;
    let mut quantiles = Vec::new();
    let mut curve = Vec::new();
    let mut k: f64 = 1.0;
    for p in TAIL_LEVELS {
        let (qa, qb) = (quantile_with_se(&a, p, z), quantile_with_se(&b, p, z));
        let ratio = if qa.mean > 0.0 && qb.mean > 0.0 {
            (qa.mean / qb.mean).max(qb.mean / qa.mean)
        } else {
            f64::INFINITY
        };
        k = k.max(ratio);
        quantiles.push((p, qa.mean, qb.mean));
        curve.push(CurvePoint::new(
            p,
            [("left", qa.mean), ("left_se", qa.se), ("right", qb.mean), ("right_se", qb.se), ("ratio", ratio)],
        ));
    }
    let q99 = |s: &[f64]| quantile_with_se(s, 0.99, z);
    let verdict = if k.is_finite() { Verdict::Consistent } else { Verdict::Violated };
    let mut report = ProbeReport::with_verdict(
        "tail-comparison",
        "comparable-tails",
        q99(&a),
        q99(&b),
        verdict,
        Expectation::Holds,
        cfg,
    )
    .param("left", left.to_string())
    .param("right", right.to_string())
    .param("mode", mode.to_string());
    if k.is_finite() {
        report = report.param("K", k);
    }
    report.curve = curve;
    Ok((report, TailComparison { k, quantiles }))
}

/// A base vector `x` and a family `x_1, …, x_m` of equal dimension.
#[derive(Clone, PartialEq, Debug)]
pub struct VectorFamily {
    pub x: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

impl VectorFamily {
    pub fn new(x: Vec<f64>, xs: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = xs.iter().find(|v| v.len() != x.len()) {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: bad.len(),
            });
        }
        if xs.is_empty() {
            return Err(Error::Empty);
        }
        Ok(Self { x, xs })
    }

    /// Entries uniform on `[-1, 1]`.
    pub fn random(dim: usize, count: usize, key: StreamKey) -> Result<Self> {
        let mut rng = key.rng();
        let mut draw = || (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect::<Vec<f64>>();
        let x = draw();
        let xs = (0..count).map(|_| draw()).collect();
        Self::new(x, xs)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// `E φ(‖x + X Σ ε_i x_i‖) ≤ E φ(‖x + c Σ X_i x_i‖)`, scanning
/// `c = 2^{j/4}`, `j = 0..=max_j`, for the smallest consistent constant.
pub fn probe_upper_reduction(
    vectors: &VectorFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    max_j: u32,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    spec.validate()?;
    if target.dim() != vectors.dim() {
        return Err(Error::LengthMismatch {
            expected: vectors.dim(),
            got: target.dim(),
        });
    }
    let grid: Vec<f64> = (0..=max_j).map(|j| 2f64.powf(j as f64 / 4.0)).collect();
    let (left_key, right_key) = (StreamKey::new(cfg.seed, DOMAIN_LEFT), StreamKey::new(cfg.seed, DOMAIN_RIGHT));
    let d = vectors.dim();
    let est = mc_estimate_many(cfg, 1 + grid.len(), |m, out| {
        let mut buf = vec![0.0; d];
        let mut rng = left_key.replicate(m).rng();
        let x = spec.sample(&mut rng);
        let mut signed = vec![0.0; d];
        for xi in &vectors.xs {
            let e = random_sign(&mut rng);
            signed.iter_mut().zip(xi).for_each(|(s, v)| *s += e * v);
        }
        for ((b, base), s) in buf.iter_mut().zip(&vectors.x).zip(&signed) {
            *b = base + x * s;
        }
        out[0] = phi.eval(target.norm(&buf)?);
        let mut rng = right_key.replicate(m).rng();
        let mut sum = vec![0.0; d];
        for xi in &vectors.xs {
            let x = spec.sample(&mut rng);
            sum.iter_mut().zip(xi).for_each(|(s, v)| *s += x * v);
        }
        for (slot, &c) in out[1..].iter_mut().zip(&grid) {
            for ((b, base), s) in buf.iter_mut().zip(&vectors.x).zip(&sum) {
                *b = base + c * s;
            }
            *slot = phi.eval(target.norm(&buf)?);
        }
        Ok(())
    })?;
    scan_report("upper-reduction", "upper-decoupling-reduction", est[0], &grid, &est[1..], cfg)
        .map(|r| spec_params(r, spec, phi, target).param("vectors", vectors.xs.len()))
}

/// One grid point of [`divergence_curve`].
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct DivergencePoint {
    pub n: usize,
    pub value: Estimate,
    /// Paired increment from the previous grid point, absent at the first.
    pub increment: Option<Estimate>,
}

/// `E max_{i≤n} |S_i|/i` along one nested path per replicate, with paired
/// increments between consecutive grid points.
pub fn divergence_curve(spec: &DistributionSpec, n_grid: &[usize], cfg: &McConfig) -> Result<Vec<DivergencePoint>> {
    spec.validate()?;
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n grid must be positive and strictly increasing".into()));
    }
    let g = n_grid.len();
    let n_max = n_grid[g - 1];
    let key = StreamKey::new(cfg.seed, DOMAIN_LEFT);
    let est = mc_estimate_many(cfg, 2 * g - 1, |m, out| {
        let mut rng = key.replicate(m).rng();
        let (mut s, mut best) = (0.0, 0.0f64);
        let mut next = 0;
        for i in 1..=n_max {
            s += spec.sample(&mut rng);
            // Divide only on a new record.
            if s.abs() > best * i as f64 {
                best = best.max(s.abs() / i as f64);
            }
            if i == n_grid[next] {
                out[next] = best;
                if next > 0 {
                    out[g + next - 1] = best - out[next - 1];
                }
                next += 1;
            }
        }
        Ok(())
    })?;
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| DivergencePoint {
            n,
            value: est[j],
            increment: (j > 0).then(|| est[g + j - 1]),
        })
        .collect())
}

/// Whether the running-average supremum keeps growing: every paired
/// increment above 3 standard errors (divergence) or every increment within
/// 3 standard errors of zero (flat).
pub fn probe_divergence_sup(
    spec: &DistributionSpec,
    n_grid: &[usize],
    expectation: Expectation,
    cfg: &McConfig,
) -> Result<ProbeReport> {
    let curve = divergence_curve(spec, n_grid, cfg)?;
    let increments: Vec<Estimate> = curve.iter().filter_map(|p| p.increment).collect();
    let increasing = !increments.is_empty() && increments.iter().all(|d| d.mean > 3.0 * d.se);
    let flat = increments.iter().all(|d| d.mean.abs() <= 3.0 * d.se);
    // The bounded-supremum claim is what the probe tests; growth violates it.
    let verdict = if increasing {
        Verdict::Violated
    } else if flat {
        Verdict::Consistent
    } else {
        Verdict::Inconclusive
    };
    let first = curve[0].value;
    let last = curve[curve.len() - 1].value;
    let mut report = ProbeReport::with_verdict(
        "divergence-sup",
        "running-average-supremum-divergence",
        last,
        first,
        verdict,
        expectation,
        cfg,
    )
    .param("spec", spec.to_string())
    .param("n_grid", n_grid.to_vec());
    report.curve = curve
        .iter()
        .map(|p| {
            let mut point = CurvePoint::new(p.n as f64, [("mean", p.value.mean), ("se", p.value.se)]);
            if let Some(d) = p.increment {
                point.values.insert("increment".into(), d.mean);
                point.values.insert("increment_se".into(), d.se);
            }
            point
        })
        .collect();
    Ok(report)
}

/// One grid point of [`index_average_curve`].
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct IndexAveragePoint {
    pub n: usize,
    pub averaged: Estimate,
}

/// `E φ(‖x + c₁ Σ_i (Σ_j X_{ji}/n) x_i‖)` for each `n`.
pub fn index_average_curve(
    vectors: &VectorFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    c1: f64,
    n_grid: &[usize],
    cfg: &McConfig,
) -> Result<Vec<IndexAveragePoint>> {
    spec.validate()?;
    if !spec.is_integrable() {
        return Err(Error::InvalidParameter(format!("index averaging needs an integrable law, got {spec}")));
    }
    if target.dim() != vectors.dim() {
        return Err(Error::LengthMismatch {
            expected: vectors.dim(),
            got: target.dim(),
        });
    }
    if n_grid.contains(&0) {
        return Err(Error::InvalidParameter("averaging length must be positive".into()));
    }
    let d = vectors.dim();
    let count = vectors.xs.len();
    let mut out = Vec::with_capacity(n_grid.len());
    for (g, &n) in n_grid.iter().enumerate() {
        // n independent copies of the sequence, row-major; n may exceed the
        // slot limit of a sample matrix.
        let averaged = mc_estimate(cfg, DOMAIN_LEFT + 100 * (g as u64 + 1), |key| {
            let x = sample_sequence(spec, n * count, &mut key.rng())?;
            let mut buf = vectors.x.clone();
            for (i, xi) in vectors.xs.iter().enumerate() {
                let mean = (0..n).map(|r| x[r * count + i]).sum::<f64>() / n as f64;
                buf.iter_mut().zip(xi).for_each(|(b, v)| *b += c1 * mean * v);
            }
            debug_assert_eq!(buf.len(), d);
            Ok(phi.eval(target.norm(&buf)?))
        })?;
        out.push(IndexAveragePoint { n, averaged });
    }
    Ok(out)
}

/// `E φ(‖x + Σ_i X_i x_i‖) ≤ E φ(‖x + c₁ Σ_i (Σ_j X_{ji}/n) x_i‖)` for all `n`
/// at once. The averaged side shrinks toward `φ(‖x‖)`, so no `n`-free `c₁`
/// exists; the report's right side is the averaged modular at the largest `n`.
pub fn probe_index_average_failure(
    vectors: &VectorFamily,
    spec: &DistributionSpec,
    phi: &PhiFunctional,
    target: &NormTarget,
    c1: f64,
    n_grid: &[usize],
    cfg: &McConfig,
) -> Result<(ProbeReport, Vec<IndexAveragePoint>)> {
    let curve = index_average_curve(vectors, spec, phi, target, c1, n_grid, cfg)?;
    let count = vectors.xs.len();
    let plain = mc_estimate(cfg, DOMAIN_RIGHT, |key| {
        let x = sample_matrix(spec, 1, count, SampleMode::Decoupled, key)?;
        let mut buf = vectors.x.clone();
        for (xi, &xv) in vectors.xs.iter().zip(x.row(0)) {
            buf.iter_mut().zip(xi).for_each(|(b, v)| *b += xv * v);
        }
        Ok(phi.eval(target.norm(&buf)?))
    })?;
    let z = cfg.z();
    let decreasing = curve.windows(2).all(|w| {
        let (a, b) = (w[0].averaged, w[1].averaged);
        a.mean - b.mean > z * (a.se * a.se + b.se * b.se).sqrt()
    });
    let last = curve.last().ok_or(Error::Empty)?.averaged;
    let mut report = ProbeReport::paired(
        "index-average-failure",
        "index-average-upper-bound-failure",
        plain,
        last,
        Expectation::Fails,
        cfg,
    )
    .param("spec", spec.to_string())
    .param("phi", phi.to_string())
    .param("target", target.to_string())
    .param("c1", c1)
    .param("strictly_decreasing", decreasing)
    .param("n_grid", n_grid.to_vec());
    report.curve = curve
        .iter()
        .map(|p| CurvePoint::new(p.n as f64, [("mean", p.averaged.mean), ("se", p.averaged.se)]))
        .collect();
    Ok((report, curve))
}
