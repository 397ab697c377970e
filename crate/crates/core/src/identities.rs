//! The exact-identity suite: deterministic checks of algebraic and
//! enumerative identities at fixed tolerances, grouped for reporting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::banach::{hyper_constant, two_point_hypercontraction, NormTarget, PhiFunctional};
use crate::chaos::{
    conditional_mean_given_rows, conditional_mean_over_perturbation, evaluate, evaluate_sliced, exact_l2,
    exact_modular, polarize_in, restrict_to_rows, row_permutation_average, walsh_expand, Vec3,
};
use crate::error::Result;
use crate::multiindex::{factorial, CoefficientFamily, HomogeneousSlice, MultiIndex, RawFamily};
use crate::randsource::{sample_matrix, walsh, DistributionSpec, SampleMode, StreamKey, WalshAssignment};
use crate::verify::{nonmultiplicative_l2_sides, BaseLaw, FTable, FamilyKind};

/// Exponent printed for the symmetric decoupled normalization `(k!)^γ`.
pub const PRINTED_GAMMA: f64 = -0.5;

#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Replaces the enumeration-pinned `γ` in the normalization check.
    pub gamma_override: Option<f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            gamma_override: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl IdentityCheck {
    fn within(name: &str, instances: usize, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
            detail: None,
        }
    }

    fn flag(name: &str, instances: usize, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            instances,
            max_deviation: 0.0,
            tolerance: 0.0,
            passed,
            detail: Some(detail),
        }
    }

    fn detail(mut self, text: String) -> Self {
        self.detail = Some(text);
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityGroup {
    pub group: &'static str,
    pub passed: bool,
    pub checks: Vec<IdentityCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub passed: bool,
    pub groups: Vec<IdentityGroup>,
}

fn group(name: &'static str, checks: Vec<IdentityCheck>) -> IdentityGroup {
    IdentityGroup {
        group: name,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn uniform(rng: &mut impl Rng) -> f64 {
    rng.random_range(-1.0..=1.0)
}

/// Off-diagonal tuples of length `k` in `[1, coords]`, lexicographic.
pub fn off_diagonal_tuples(k: usize, coords: usize) -> Vec<Vec<u32>> {
    use itertools::Itertools;
    (1..=coords as u32).permutations(k).collect()
}

/// A family on `[1, n]` whose entries are kept with probability `density`
/// and drawn uniformly from `[-1, 1]`.
pub fn random_family(rng: &mut impl Rng, n: usize, coords: usize, dim: usize, density: f64) -> Result<CoefficientFamily> {
    let mut f = CoefficientFamily::new(n, coords, dim)?;
    f.set_empty_term((0..dim).map(|_| uniform(rng)).collect())?;
    for alpha in MultiIndex::all_subsets(n)? {
        if alpha.is_empty() || alpha.card() > coords {
            continue;
        }
        for t in off_diagonal_tuples(alpha.card(), coords) {
            if rng.random_bool(density) {
                f.insert(alpha, t, (0..dim).map(|_| uniform(rng)).collect())?;
            }
        }
    }
    Ok(f)
}

/// Like [`random_family`] but diagonal tuples are allowed.
pub fn random_raw_family(rng: &mut impl Rng, n: usize, coords: usize, dim: usize, density: f64) -> Result<RawFamily> {
    let mut f = RawFamily::new(n, coords, dim)?;
    f.set_empty_term((0..dim).map(|_| uniform(rng)).collect())?;
    for alpha in MultiIndex::all_subsets(n)? {
        if alpha.is_empty() {
            continue;
        }
        let k = alpha.card();
        for code in 0..coords.pow(k as u32) {
            if !rng.random_bool(density) {
                continue;
            }
            let mut c = code;
            let t: Vec<u32> = (0..k)
                .map(|_| {
                    let v = (c % coords) as u32 + 1;
                    c /= coords;
                    v
                })
                .collect();
            f.insert(alpha, t, (0..dim).map(|_| uniform(rng)).collect())?;
        }
    }
    Ok(f)
}

/// A homogeneous degree-`k` slice on `[1, coords]`; `tetrahedral` keeps only
/// strictly increasing tuples.
pub fn random_slice(rng: &mut impl Rng, k: usize, coords: usize, dim: usize, tetrahedral: bool) -> Result<HomogeneousSlice> {
    let mut s = HomogeneousSlice::new(k, dim);
    for t in off_diagonal_tuples(k, coords) {
        if tetrahedral && !t.windows(2).all(|w| w[0] < w[1]) {
            continue;
        }
        s.insert(t, (0..dim).map(|_| uniform(rng)).collect())?;
    }
    Ok(s)
}

fn raw_distance(a: &RawFamily, b: &RawFamily) -> f64 {
    let mut worst = max_abs_diff(a.empty_term(), b.empty_term());
    let zero = vec![0.0; a.empty_term().len()];
    for (x, y) in [(a, b), (b, a)] {
        for (alpha, tuple, v) in x.entries() {
            let w = y.get(alpha, tuple).unwrap_or(&zero);
            worst = worst.max(max_abs_diff(v, w));
        }
    }
    worst
}

/// Runs every identity group.
pub fn run_identity_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let groups = vec![
        polarization_group(&mut rng)?,
        walsh_group(),
        normalization_group(&mut rng, opts.gamma_override)?,
        slicing_group(&mut rng)?,
        symmetrizer_group(&mut rng)?,
        conditional_group(&mut rng)?,
        nonmultiplicative_group(&mut rng)?,
        hypercontraction_group()?,
    ];
    Ok(SuiteReport {
        seed: opts.seed,
        passed: groups.iter().all(|g| g.passed),
        groups,
    })
}

fn polarization_group(rng: &mut ChaCha8Rng) -> Result<IdentityGroup> {
    let (mut real, mut vector) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let k = 1 + i % 4;
        let n = k + rng.random_range(0..=1);
        let window = k + rng.random_range(0..=1);
        let slots: Vec<usize> = {
            use rand::seq::index::sample;
            let mut s: Vec<usize> = sample(rng, n, k).into_iter().map(|s| s + 1).collect();
            s.sort_unstable();
            s
        };
        let alpha = MultiIndex::from_slots(n, &slots)?;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..window).map(|_| uniform(rng)).collect()).collect();
        real = real.max(polarize_in(alpha, &rows, window)?.max_deviation());
        let rows3: Vec<Vec<Vec3>> = (0..n)
            .map(|_| (0..window).map(|_| Vec3([uniform(rng), uniform(rng), uniform(rng)])).collect())
            .collect();
        vector = vector.max(polarize_in(alpha, &rows3, window)?.max_deviation());
    }
    Ok(group(
        "polarization",
        vec![
            IdentityCheck::within("real matrices, k <= 4", 100, real, 1e-10),
            IdentityCheck::within("R^3-valued matrices, k <= 4", 100, vector, 1e-10),
        ],
    ))
}

fn walsh_group() -> IdentityGroup {
    let n = 8;
    let mut worst = 0i64;
    for a in 0u32..1 << n {
        for c in 0u32..1 << n {
            let alpha = MultiIndex::new(n, a).expect("in range");
            let gamma = MultiIndex::new(n, c).expect("in range");
            let sum: i64 = (0u32..1 << n)
                .map(|b| {
                    let beta = WalshAssignment(MultiIndex::new(n, b).expect("in range"));
                    i64::from(walsh(alpha, beta).expect("same n")) * i64::from(walsh(gamma, beta).expect("same n"))
                })
                .sum();
            let want = if a == c { 1 << n } else { 0 };
            worst = worst.max((sum - want).abs());
        }
    }
    group(
        "walsh-orthonormality",
        vec![IdentityCheck::within("n = 8, integer sums", 1 << (2 * n), worst as f64, 0.0)],
    )
}

/// Coordinate window for a degree-`k` decoupled expansion with at most 22
/// sign variables.
pub fn normalization_window(k: usize) -> usize {
    (22 / k).min(8)
}

/// The `γ` equating the coupled and decoupled second moments of a
/// symmetric degree-2 slice, from full sign enumeration.
pub fn pin_gamma(slice: &HomogeneousSlice, coords: usize) -> Result<f64> {
    let k = slice.degree();
    let f = slice.to_family(k, coords)?;
    let target = NormTarget::lp(slice.dim(), 2.0)?;
    let phi = PhiFunctional::Power(2.0);
    let coupled = exact_modular(&f, SampleMode::Coupled, &phi, &target)?;
    let decoupled = exact_modular(&f, SampleMode::Decoupled, &phi, &target)?;
    Ok((coupled / decoupled).ln() / (2.0 * factorial(k).ln()))
}

fn normalization_group(rng: &mut ChaCha8Rng, gamma_override: Option<f64>) -> Result<IdentityGroup> {
    let mut pinned: Vec<f64> = Vec::new();
    for _ in 0..5 {
        let s = random_slice(rng, 2, 4, 2, false)?;
        let sym = s.to_family(2, 4)?.symmetrize()?;
        let slice = sym.homogeneous_slices()?.into_iter().find(|h| h.degree() == 2).expect("degree 2 present");
        pinned.push(pin_gamma(&slice, 4)?);
    }
    let gamma_star = pinned.iter().sum::<f64>() / pinned.len() as f64;
    let spread = pinned.iter().map(|g| (g - gamma_star).abs()).fold(0.0, f64::max);
    let gamma = gamma_override.unwrap_or(gamma_star);

    let (mut sym_worst, mut tet_worst, mut cross_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut count = 0;
    for _ in 0..4 {
        let (mut coupled_total, mut decoupled_total) = (0.0, 0.0);
        for k in 1..=4 {
            let coords = normalization_window(k);
            let slice = random_slice(rng, k, coords, 1, false)?;
            let f = slice.to_family(k, coords)?.symmetrize()?;
            let coupled = exact_l2(&walsh_expand(&f, SampleMode::Coupled)?);
            let scaled = f.scale_by_degree(|d| factorial(d).powf(gamma));
            let decoupled = exact_l2(&walsh_expand(&scaled, SampleMode::Decoupled)?);
            sym_worst = sym_worst.max(rel_diff(coupled, decoupled));
            coupled_total += coupled;
            decoupled_total += decoupled;

            let tet = random_slice(rng, k, coords, 1, true)?.to_family(k, coords)?;
            let coupled = exact_l2(&walsh_expand(&tet, SampleMode::Coupled)?);
            let decoupled = exact_l2(&walsh_expand(&tet, SampleMode::Decoupled)?);
            tet_worst = tet_worst.max(rel_diff(coupled, decoupled));
            count += 1;
        }
        sym_worst = sym_worst.max(rel_diff(coupled_total, decoupled_total));

        // Degrees 1..=3 together on [1, 3] × [1, 4].
        let mut f = CoefficientFamily::new(3, 4, 1)?;
        let mut parts = 0.0;
        for k in 1..=3 {
            let part = random_slice(rng, k, 4, 1, false)?.to_family(3, 4)?.symmetrize()?;
            parts += exact_l2(&walsh_expand(&part, SampleMode::Coupled)?);
            for (alpha, tuple, value) in part.entries() {
                f.insert(alpha, tuple.clone(), value.to_vec())?;
            }
        }
        cross_worst = cross_worst.max(rel_diff(exact_l2(&walsh_expand(&f, SampleMode::Coupled)?), parts));
    }
    let sign_flag = if gamma_star.signum() != PRINTED_GAMMA.signum() {
        format!("pinned gamma* = {gamma_star:+.12} has the opposite sign to the printed exponent {PRINTED_GAMMA:+}")
    } else {
        format!("pinned gamma* = {gamma_star:+.12} agrees in sign with the printed exponent {PRINTED_GAMMA:+}")
    };
    Ok(group(
        "decoupled-normalization",
        vec![
            IdentityCheck::within("gamma* consistent across degree-2 instances", pinned.len(), spread, 1e-10)
                .detail(sign_flag),
            IdentityCheck::within("symmetric families, degrees <= 4, (k!)^gamma", count, sym_worst, 1e-10)
                .detail(format!("gamma used = {gamma:+.12}")),
            IdentityCheck::within("tetrahedral families, no normalization", count, tet_worst, 1e-10),
            IdentityCheck::within("cross-degree orthogonality", 4, cross_worst, 1e-10),
        ],
    ))
}

fn slicing_group(rng: &mut ChaCha8Rng) -> Result<IdentityGroup> {
    let mut worst = 0.0f64;
    for i in 0..500 {
        let n = rng.random_range(1..=4);
        let coords = rng.random_range(1..=5);
        let dim = rng.random_range(1..=2);
        let f = random_family(rng, n, coords, dim, 0.4)?;
        let mode = if i % 2 == 0 { SampleMode::Coupled } else { SampleMode::Decoupled };
        let x = sample_matrix(&DistributionSpec::Gaussian, n, coords, mode, StreamKey::new(rng.random(), 0))?;
        worst = worst.max(max_abs_diff(&evaluate_sliced(&f, &x)?, &evaluate(&f, &x)?));
    }
    Ok(group(
        "slicing",
        vec![IdentityCheck::within("sliced versus direct evaluation", 500, worst, 1e-12)],
    ))
}

fn symmetrizer_group(rng: &mut ChaCha8Rng) -> Result<IdentityGroup> {
    type Op = fn(&RawFamily) -> Result<RawFamily>;
    let ops: [(&str, Op); 3] = [
        ("S", |f| f.symmetrize()),
        ("D", |f| Ok(f.nullify_diagonals())),
        ("A", |f| f.index_average()),
    ];
    let (mut idem, mut comm, mut adj) = (0.0f64, 0.0f64, 0.0f64);
    let instances = 200;
    for _ in 0..instances {
        let n = rng.random_range(1..=4);
        let coords = rng.random_range(1..=4);
        let f1 = random_raw_family(rng, n, coords, 1, 0.3)?;
        let f2 = random_raw_family(rng, n, coords, 1, 0.3)?;
        for (_, u) in &ops {
            let once = u(&f1)?;
            idem = idem.max(raw_distance(&u(&once)?, &once));
        }
        for (i, (_, u)) in ops.iter().enumerate() {
            for (_, v) in &ops[i + 1..] {
                comm = comm.max(raw_distance(&u(&v(&f1)?)?, &v(&u(&f1)?)?));
            }
        }
        let pair = |a: &RawFamily, b: &RawFamily| -> Result<f64> { Ok(a.pointwise_product(b)?.plain_sum()[0]) };
        for (_, u) in &ops {
            for (_, v) in &ops {
                let lhs = pair(&u(&f1)?, &v(&f2)?)?;
                let mid = pair(&f1, &u(&v(&f2)?)?)?;
                let rhs = pair(&u(&v(&f1)?)?, &f2)?;
                adj = adj.max((lhs - mid).abs()).max((lhs - rhs).abs());
            }
        }
    }
    Ok(group(
        "symmetrizer-algebra",
        vec![
            IdentityCheck::within("S, D, A idempotent", instances, idem, 1e-12),
            IdentityCheck::within("S, D, A pairwise commute", instances, comm, 1e-12),
            IdentityCheck::within("adjointness <U f1 . V f2> = <f1 . UV f2> = <UV f1 . f2>", instances, adj, 1e-12),
        ],
    ))
}

fn conditional_group(rng: &mut ChaCha8Rng) -> Result<IdentityGroup> {
    let (mut rows_worst, mut pert_worst, mut perm_worst, mut sym_eq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut strict_ok = true;
    let mut min_gap = f64::INFINITY;
    let instances = 40;
    for _ in 0..instances {
        let n = rng.random_range(1..=3);
        let coords = rng.random_range(n.max(2)..=4);
        let f = random_family(rng, n, coords, 1, 0.5)?;
        let x = sample_matrix(&DistributionSpec::Gaussian, n, coords, SampleMode::Decoupled, StreamKey::new(rng.random(), 0))?;
        let beta = MultiIndex::new(n, rng.random_range(0..1u32 << n))?;
        rows_worst = rows_worst.max(max_abs_diff(
            &conditional_mean_given_rows(&f, &x, beta)?,
            &evaluate(&restrict_to_rows(&f, beta)?, &x)?,
        ));
        pert_worst = pert_worst.max(max_abs_diff(&conditional_mean_over_perturbation(&f, &x)?, &evaluate(&f, &x)?));

        // Full-α part: averaging over row permutations is the symmetrizer.
        let full = MultiIndex::full(n)?;
        let mut top = CoefficientFamily::new(n, coords, 1)?;
        for t in off_diagonal_tuples(n, coords) {
            if rng.random_bool(0.7) {
                top.insert(full, t, vec![uniform(rng)])?;
            }
        }
        let sym = top.symmetrize()?;
        perm_worst = perm_worst.max(max_abs_diff(&row_permutation_average(&top, &x)?, &evaluate(&sym, &x)?));
        let before = exact_l2(&walsh_expand(&top, SampleMode::Decoupled)?);
        let after = exact_l2(&walsh_expand(&sym, SampleMode::Decoupled)?);
        if top.is_symmetric() {
            sym_eq = sym_eq.max(rel_diff(before, after));
        } else {
            min_gap = min_gap.min(before - after);
            strict_ok &= before - after > 1e-12;
        }
        let resym = exact_l2(&walsh_expand(&sym.symmetrize()?, SampleMode::Decoupled)?);
        sym_eq = sym_eq.max(rel_diff(after, resym));
    }
    Ok(group(
        "conditional-expectation",
        vec![
            IdentityCheck::within("E[<f X> | rows in beta] = <f restricted to beta>", instances, rows_worst, 1e-12),
            IdentityCheck::within("E[<f (X + X')> | X] = <f X>", instances, pert_worst, 1e-12),
            IdentityCheck::within("row-permutation average = symmetrized evaluation", instances, perm_worst, 1e-12),
            IdentityCheck::within("symmetric input keeps its decoupled L2", instances, sym_eq, 1e-12),
            IdentityCheck::flag(
                "symmetrization strictly contracts decoupled L2 of non-symmetric f",
                instances,
                strict_ok,
                format!("smallest gap {min_gap:.3e}"),
            ),
        ],
    ))
}

/// `c_k` at which the non-multiplicative second-moment identity holds under
/// the library's summation over all off-diagonal tuples: 1 for tetrahedral
/// tables, `√(k!)` for symmetric ones.
pub fn enumerated_constant(kind: FamilyKind, k: usize) -> Option<f64> {
    match kind {
        FamilyKind::Tetrahedral => Some(1.0),
        FamilyKind::Symmetric => Some(factorial(k).sqrt()),
        FamilyKind::General => None,
    }
}

fn nonmultiplicative_group(rng: &mut ChaCha8Rng) -> Result<IdentityGroup> {
    let base = BaseLaw::two_level();
    let (mut worst, mut count) = (0.0f64, 0);
    for i in 0..20 {
        let kind = if i % 2 == 0 { FamilyKind::Tetrahedral } else { FamilyKind::Symmetric };
        let k = 1 + i % 3;
        let coords = 3;
        let table = FTable::random(k, coords, base.levels(), kind, rng)?;
        let c = enumerated_constant(table.kind(), k).unwrap_or(1.0);
        let (lhs, rhs) = nonmultiplicative_l2_sides(&[table], &[c], &base)?;
        worst = worst.max(rel_diff(lhs, rhs));
        count += 1;
    }
    Ok(group(
        "nonmultiplicative-l2",
        vec![IdentityCheck::within("c_k = 1 tetrahedral, sqrt(k!) symmetric", count, worst, 1e-10)
            .detail("the printed constant k! for symmetric tables does not give equality".to_string())],
    ))
}

fn hypercontraction_group() -> Result<IdentityGroup> {
    let mut checks = Vec::new();
    for (p, q) in [(4.0, 2.0), (3.0, 2.0)] {
        let c = hyper_constant(p, q)?;
        let grid: Vec<f64> = (1..=100).map(|j| j as f64 / 50.0).collect();
        let worst = grid
            .iter()
            .map(|&t| {
                let (l, r) = two_point_hypercontraction(p, q, c, t);
                r - l
            })
            .fold(f64::NEG_INFINITY, f64::max);
        checks.push(IdentityCheck::within(&format!("c_{{{p},{q}}} = {c:.6} holds on the t-grid"), 100, worst.max(0.0), 1e-14));
        let fails = grid.iter().any(|&t| {
            let (l, r) = two_point_hypercontraction(p, q, 0.95 * c, t);
            l < r
        });
        checks.push(IdentityCheck::flag(
            &format!("c_{{{p},{q}}} reduced by 5% fails somewhere"),
            100,
            fails,
            "sharpness witness".to_string(),
        ));
    }
    Ok(group("hypercontraction-constants", checks))
}

/// Human-readable summary lines.
pub fn render(report: &SuiteReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        out.push_str(&format!("[{}] {}\n", if g.passed { "PASS" } else { "FAIL" }, g.group));
        for c in &g.checks {
            out.push_str(&format!(
                "    {} {} (n={}, max dev {:.3e}, tol {:.0e})",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.instances,
                c.max_deviation,
                c.tolerance
            ));
            if let Some(d) = &c.detail {
                out.push_str(&format!(" -- {d}"));
            }
            out.push('\n');
        }
    }
    out.push_str(&format!(
        "{} of {} identity groups passed\n",
        report.groups.iter().filter(|g| g.passed).count(),
        report.groups.len()
    ));
    out
}
