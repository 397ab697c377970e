//! Evaluation of coupled and decoupled chaoses `⟪f X^⊗⟫`, the slicing
//! recursion, polarization, and exact Rademacher oracles (Walsh expansion
//! and full sign enumeration).

use std::collections::{BTreeMap, BTreeSet};
use std::ops::{Add, Mul, Sub};

use itertools::Itertools;

use crate::banach::{NormTarget, PhiFunctional};
use crate::error::{Error, Result};
use crate::multiindex::{factorial, CoefficientFamily, HomogeneousSlice, IndexTuple, MultiIndex, MAX_SYMMETRIZE_DEGREE};
use crate::numeric::{compensated_sum, NeumaierSum};
use crate::randsource::{SampleMatrix, SampleMode};

/// `2^22` sign assignments at most.
pub const MAX_WALSH_VARIABLES: usize = 22;

fn check_fits(f: &CoefficientFamily, x: &SampleMatrix) -> Result<()> {
    if f.n() > x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "family has {} slots, matrix has {} rows",
            f.n(),
            x.rows()
        )));
    }
    if f.max_coord_used() > x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "family uses coordinate {}, matrix has {} columns",
            f.max_coord_used(),
            x.cols()
        )));
    }
    Ok(())
}

/// `⟪f X^⊗⟫ = f_∅ + Σ_α Σ_i f_α(i) Π_j X_{α_j, i_j}`, accumulated in
/// canonical entry order with compensated addition.
pub fn evaluate(f: &CoefficientFamily, x: &SampleMatrix) -> Result<Vec<f64>> {
    check_fits(f, x)?;
    Ok(evaluate_unchecked(f, x))
}

pub(crate) fn evaluate_unchecked(f: &CoefficientFamily, x: &SampleMatrix) -> Vec<f64> {
    let mut acc = vec![NeumaierSum::default(); f.dim()];
    for (a, e) in acc.iter_mut().zip(f.empty_term()) {
        a.add(*e);
    }
    for (alpha, tuple, value) in f.entries() {
        let mut prod = 1.0;
        for (slot, &c) in alpha.slots().zip(tuple.as_slice()) {
            prod *= x.at(slot, c);
        }
        for (a, v) in acc.iter_mut().zip(value) {
            a.add(prod * v);
        }
    }
    acc.iter().map(NeumaierSum::total).collect()
}

type Piece<'a> = (MultiIndex, &'a [u32], &'a [f64]);

/// Same value as [`evaluate`], computed by recursion on the coordinate used
/// by the maximal slot `α*`: entries with `i_{α*} < m` are handled at bound
/// `m - 1`, while entries with `i_{α*} = m` factor as `X_{α*, m}` times a
/// lower-degree residual family on `α \ {α*}`.
pub fn evaluate_sliced(f: &CoefficientFamily, x: &SampleMatrix) -> Result<Vec<f64>> {
    check_fits(f, x)?;
    let mut pieces: Vec<Piece> = f.entries().map(|(a, t, v)| (a, t.as_slice(), v)).collect();
    let empty_alpha = MultiIndex::empty(f.n())?;
    let constant = f.empty_term().to_vec();
    pieces.push((empty_alpha, &[], &constant));
    let bound = f.max_coord_used() as u32;
    Ok(sliced(&pieces, bound, bound, x, f.dim()))
}

fn sliced(pieces: &[Piece], m: u32, bound: u32, x: &SampleMatrix, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if pieces.is_empty() {
        return out;
    }
    let last = |p: &Piece| p.1.last().copied().unwrap_or(0);
    if m == 0 {
        for p in pieces.iter().filter(|p| p.0.is_empty()) {
            for (o, v) in out.iter_mut().zip(p.2) {
                *o += v;
            }
        }
        return out;
    }
    let (high, low): (Vec<Piece>, Vec<Piece>) = pieces.iter().copied().partition(|p| last(p) == m);
    out = sliced(&low, m - 1, bound, x, dim);
    let by_slot = high.into_iter().into_group_map_by(|p| p.0.max_slot());
    for (slot, group) in by_slot.into_iter().sorted_by_key(|(s, _)| *s) {
        let residual: Vec<Piece> = group
            .iter()
            .map(|p| (p.0.without(slot), &p.1[..p.1.len() - 1], p.2))
            .collect();
        let r = sliced(&residual, bound, bound, x, dim);
        let factor = x.at(slot, m);
        for (o, v) in out.iter_mut().zip(r) {
            *o += factor * v;
        }
    }
    out
}

/// A commutative algebra in which polarization is checked.
pub trait Algebra: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    fn zero() -> Self;
    fn one() -> Self;
    fn scale(self, c: f64) -> Self;
    /// Largest componentwise absolute difference.
    fn distance(self, other: Self) -> f64;
}

impl Algebra for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn distance(self, other: Self) -> f64 {
        (self - other).abs()
    }
}

/// `R^3` with componentwise multiplication.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Vec3(pub [f64; 3]);

impl Add for Vec3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul for Vec3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Vec3([self.0[0] * o.0[0], self.0[1] * o.0[1], self.0[2] * o.0[2]])
    }
}

impl Algebra for Vec3 {
    fn zero() -> Self {
        Vec3([0.0; 3])
    }
    fn one() -> Self {
        Vec3([1.0; 3])
    }
    fn scale(self, c: f64) -> Self {
        Vec3([self.0[0] * c, self.0[1] * c, self.0[2] * c])
    }
    fn distance(self, other: Self) -> f64 {
        (0..3).map(|j| (self.0[j] - other.0[j]).abs()).fold(0.0, f64::max)
    }
}

/// Both sides of the polarization formula on every off-diagonal tuple of a
/// coordinate window.
#[derive(Clone, Debug)]
pub struct PolarizationTable<A> {
    pub tuples: Vec<IndexTuple>,
    /// Symmetric tensor `X^{Ŝ⊗α}`.
    pub left: Vec<A>,
    /// `(1/k!) Σ_{β⊂α} (-1)^{k-|β|} (Σ_{l∈β} X_l)^{⊗α}`.
    pub right: Vec<A>,
}

impl<A: Algebra> PolarizationTable<A> {
    pub fn max_deviation(&self) -> f64 {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| l.distance(*r))
            .fold(0.0, f64::max)
    }
}

/// Polarization over a matrix with entries in any commutative algebra;
/// `rows[l - 1]` is row `l`. Tuples range over `[1, window]`.
pub fn polarize_in<A: Algebra>(alpha: MultiIndex, rows: &[Vec<A>], window: usize) -> Result<PolarizationTable<A>> {
    let k = alpha.card();
    if k > MAX_SYMMETRIZE_DEGREE {
        return Err(Error::Guard {
            what: "polarization degree",
            value: k,
            limit: MAX_SYMMETRIZE_DEGREE,
        });
    }
    if alpha.max_slot() > rows.len() {
        return Err(Error::DimensionMismatch("multi-index exceeds matrix rows".into()));
    }
    if rows.iter().any(|r| r.len() < window) {
        return Err(Error::DimensionMismatch("window exceeds matrix columns".into()));
    }
    let slots: Vec<usize> = alpha.slots().collect();
    let inv_fact = 1.0 / factorial(k);
    let perms: Vec<Vec<usize>> = (0..k).permutations(k).collect();
    let subsets: Vec<(Vec<usize>, bool)> = (0..1u32 << k)
        .map(|mask| {
            let members: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| slots[j]).collect();
            let negative = (k - members.len()) % 2 == 1;
            (members, negative)
        })
        .collect();
    let mut table = PolarizationTable {
        tuples: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
    };
    for tuple in (1..=window as u32).permutations(k) {
        let x = |slot: usize, c: u32| rows[slot - 1][c as usize - 1];
        let mut left = A::zero();
        for p in &perms {
            let mut prod = A::one();
            for (j, &c) in tuple.iter().enumerate() {
                prod = prod * x(slots[p[j]], c);
            }
            left = left + prod;
        }
        let mut right = A::zero();
        for (members, negative) in &subsets {
            let mut prod = A::one();
            for &c in &tuple {
                let mut s = A::zero();
                for &l in members {
                    s = s + x(l, c);
                }
                prod = prod * s;
            }
            right = if *negative { right - prod } else { right + prod };
        }
        table.tuples.push(IndexTuple::new(tuple));
        table.left.push(left.scale(inv_fact));
        table.right.push(right.scale(inv_fact));
    }
    Ok(table)
}

/// [`polarize_in`] over a real sample matrix, on its full column window.
pub fn polarize(alpha: MultiIndex, x: &SampleMatrix) -> Result<PolarizationTable<f64>> {
    let rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    polarize_in(alpha, &rows, x.cols())
}

/// `Q̄_k = (k!)^γ Σ_i f_k(i) X_{1 i_1} ⋯ X_{k i_k}` over the stored
/// (off-diagonal) support of `f_k`, on a decoupled matrix.
pub fn decoupled_homogeneous(fk: &HomogeneousSlice, x: &SampleMatrix, gamma: f64) -> Result<Vec<f64>> {
    if x.mode() != SampleMode::Decoupled {
        return Err(Error::ModeMismatch("decoupled chaos needs a decoupled matrix".into()));
    }
    let k = fk.degree();
    if k > x.rows() || fk.max_coord_used() > x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "degree {k} slice does not fit a {}x{} matrix",
            x.rows(),
            x.cols()
        )));
    }
    let norm = factorial(k).powf(gamma);
    let mut acc = vec![NeumaierSum::default(); fk.dim()];
    for (tuple, value) in fk.iter() {
        let prod: f64 = tuple.as_slice().iter().enumerate().map(|(j, &c)| x.at(j + 1, c)).product();
        for (a, v) in acc.iter_mut().zip(value) {
            a.add(norm * prod * v);
        }
    }
    Ok(acc.iter().map(NeumaierSum::total).collect())
}

/// The tetrahedral decoupled chaos: no normalization, increasing support only.
pub fn decoupled_tetrahedral(fk: &HomogeneousSlice, x: &SampleMatrix) -> Result<Vec<f64>> {
    if !fk.is_tetrahedral() {
        return Err(Error::NotTetrahedral("slice has a non-increasing tuple".into()));
    }
    decoupled_homogeneous(fk, x, 0.0)
}

/// A Rademacher variable of a Walsh expansion: a column of the coupled
/// sequence, or one entry of the decoupled matrix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum WalshVar {
    Column(u32),
    Entry { row: u32, col: u32 },
}

/// Exact expansion of a Rademacher chaos in distinct `±1` monomials, one
/// sparse map per output coordinate. The empty monomial is the constant.
#[derive(Clone, PartialEq, Debug)]
pub struct WalshPolynomial {
    mode: SampleMode,
    terms: Vec<BTreeMap<Vec<WalshVar>, f64>>,
}

impl WalshPolynomial {
    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, coord: usize, monomial: &[WalshVar]) -> f64 {
        self.terms[coord].get(monomial).copied().unwrap_or(0.0)
    }

    pub fn terms(&self, coord: usize) -> impl Iterator<Item = (&[WalshVar], f64)> {
        self.terms[coord].iter().map(|(m, c)| (m.as_slice(), *c))
    }

    pub fn variables(&self) -> BTreeSet<WalshVar> {
        self.terms.iter().flat_map(|t| t.keys().flatten().copied()).collect()
    }

    /// Value at a sign assignment.
    pub fn evaluate(&self, sign: impl Fn(WalshVar) -> f64) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| compensated_sum(t.iter().map(|(m, c)| c * m.iter().map(|&v| sign(v)).product::<f64>())))
            .collect()
    }
}

fn walsh_variables(f: &CoefficientFamily, mode: SampleMode) -> BTreeSet<WalshVar> {
    let mut vars = BTreeSet::new();
    for (alpha, tuple, _) in f.entries() {
        for (slot, &c) in alpha.slots().zip(tuple.as_slice()) {
            vars.insert(match mode {
                SampleMode::Coupled => WalshVar::Column(c),
                SampleMode::Decoupled => WalshVar::Entry { row: slot as u32, col: c },
            });
        }
    }
    vars
}

fn check_variable_count(count: usize) -> Result<()> {
    if count > MAX_WALSH_VARIABLES {
        return Err(Error::Guard {
            what: "Walsh variable count",
            value: count,
            limit: MAX_WALSH_VARIABLES,
        });
    }
    Ok(())
}

/// Symbolic expansion of `⟪f X^⊗⟫` for Rademacher entries. In coupled mode
/// the row index is dropped before reduction and repeated factors cancel in
/// pairs (`ε² = 1`).
pub fn walsh_expand(f: &CoefficientFamily, mode: SampleMode) -> Result<WalshPolynomial> {
    check_variable_count(walsh_variables(f, mode).len())?;
    let mut terms: Vec<BTreeMap<Vec<WalshVar>, f64>> = vec![BTreeMap::new(); f.dim()];
    let mut add = |monomial: Vec<WalshVar>, value: &[f64]| {
        for (t, v) in terms.iter_mut().zip(value) {
            *t.entry(monomial.clone()).or_insert(0.0) += v;
        }
    };
    add(Vec::new(), f.empty_term());
    for (alpha, tuple, value) in f.entries() {
        let mut vars: Vec<WalshVar> = alpha
            .slots()
            .zip(tuple.as_slice())
            .map(|(slot, &c)| match mode {
                SampleMode::Coupled => WalshVar::Column(c),
                SampleMode::Decoupled => WalshVar::Entry { row: slot as u32, col: c },
            })
            .collect();
        vars.sort_unstable();
        let reduced: Vec<WalshVar> = vars
            .into_iter()
            .dedup_with_count()
            .filter(|(count, _)| count % 2 == 1)
            .map(|(_, v)| v)
            .collect();
        add(reduced, value);
    }
    for t in terms.iter_mut() {
        t.retain(|_, c| *c != 0.0);
    }
    Ok(WalshPolynomial { mode, terms })
}

/// `E‖Q‖₂² = Σ c_w²` by orthonormality of distinct Walsh monomials.
pub fn exact_l2(p: &WalshPolynomial) -> f64 {
    compensated_sum(p.terms.iter().flat_map(|t| t.values().map(|c| c * c)))
}

/// `2^{-v} Σ_assignments φ(‖⟪f ε^⊗⟫‖)` over all sign assignments of the `v`
/// Rademacher variables the family touches.
pub fn exact_modular(f: &CoefficientFamily, mode: SampleMode, phi: &PhiFunctional, target: &NormTarget) -> Result<f64> {
    if target.dim() != f.dim() {
        return Err(Error::LengthMismatch {
            expected: f.dim(),
            got: target.dim(),
        });
    }
    let vars: Vec<WalshVar> = walsh_variables(f, mode).into_iter().collect();
    check_variable_count(vars.len())?;
    let position: BTreeMap<WalshVar, usize> = vars.iter().enumerate().map(|(j, v)| (*v, j)).collect();
    // Off-diagonal support: the variables of one entry are distinct, so its
    // sign is the parity of the set bits under the assignment.
    let entries: Vec<(u32, &[f64])> = f
        .entries()
        .map(|(alpha, tuple, value)| {
            let mask = alpha
                .slots()
                .zip(tuple.as_slice())
                .map(|(slot, &c)| {
                    let v = match mode {
                        SampleMode::Coupled => WalshVar::Column(c),
                        SampleMode::Decoupled => WalshVar::Entry { row: slot as u32, col: c },
                    };
                    1u32 << position[&v]
                })
                .fold(0u32, |m, b| m ^ b);
            (mask, value)
        })
        .collect();
    let mut total = NeumaierSum::default();
    let mut value = vec![0.0; f.dim()];
    for assignment in 0u32..(1u32 << vars.len()) {
        value.copy_from_slice(f.empty_term());
        for (mask, v) in &entries {
            if (mask & assignment).count_ones() % 2 == 0 {
                value.iter_mut().zip(*v).for_each(|(a, b)| *a += b);
            } else {
                value.iter_mut().zip(*v).for_each(|(a, b)| *a -= b);
            }
        }
        total.add(phi.eval(target.norm(&value)?));
    }
    Ok(total.total() / f64::powi(2.0, vars.len() as i32))
}

/// Keeps the entries with `α ⊂ β` (the `X^β`-measurable part).
pub fn restrict_to_rows(f: &CoefficientFamily, beta: MultiIndex) -> Result<CoefficientFamily> {
    let mut out = CoefficientFamily::new(f.n(), f.coord_bound(), f.dim())?;
    out.set_empty_term(f.empty_term().to_vec())?;
    for (alpha, tuple, value) in f.entries() {
        if alpha.is_subset_of(beta) {
            out.insert(alpha, tuple.clone(), value.to_vec())?;
        }
    }
    Ok(out)
}

fn signed_rows(x: &SampleMatrix, free_rows: &[usize], assignment: u32) -> Vec<Vec<f64>> {
    let cols = x.cols();
    let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for (j, &r) in free_rows.iter().enumerate() {
        for (c, v) in rows[r].iter_mut().enumerate() {
            let bit = j * cols + c;
            *v = if assignment >> bit & 1 == 1 { -1.0 } else { 1.0 };
        }
    }
    rows
}

/// `E[⟪f X^⊗⟫ | X^β]` for a decoupled matrix whose rows outside `β` are
/// independent Rademacher rows, by enumerating those rows. The entries of
/// `x` on rows outside `β` are ignored.
pub fn conditional_mean_given_rows(f: &CoefficientFamily, x: &SampleMatrix, beta: MultiIndex) -> Result<Vec<f64>> {
    if x.mode() != SampleMode::Decoupled {
        return Err(Error::ModeMismatch("conditioning on rows needs a decoupled matrix".into()));
    }
    check_fits(f, x)?;
    let free: Vec<usize> = (0..x.rows()).filter(|&r| !beta.contains(r + 1)).collect();
    let v = free.len() * x.cols();
    check_variable_count(v)?;
    let mut acc = vec![NeumaierSum::default(); f.dim()];
    for assignment in 0u32..(1u32 << v) {
        let m = SampleMatrix::from_rows(SampleMode::Decoupled, signed_rows(x, &free, assignment))?;
        for (a, y) in acc.iter_mut().zip(evaluate_unchecked(f, &m)) {
            a.add(y);
        }
    }
    let scale = 1.0 / f64::powi(2.0, v as i32);
    Ok(acc.iter().map(|a| a.total() * scale).collect())
}

/// `E[⟪f (X + X')^⊗⟫ | X]` for an independent Rademacher matrix `X'`, by
/// enumerating every entry of `X'`.
pub fn conditional_mean_over_perturbation(f: &CoefficientFamily, x: &SampleMatrix) -> Result<Vec<f64>> {
    check_fits(f, x)?;
    let rows_used = f.n();
    let v = rows_used * x.cols();
    check_variable_count(v)?;
    let all: Vec<usize> = (0..rows_used).collect();
    let mut acc = vec![NeumaierSum::default(); f.dim()];
    for assignment in 0u32..(1u32 << v) {
        let signs = signed_rows(x, &all, assignment);
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| {
                x.row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, &xv)| if r < rows_used { xv + signs[r][c] } else { xv })
                    .collect()
            })
            .collect();
        let m = SampleMatrix::from_rows(SampleMode::Decoupled, rows)?;
        for (a, y) in acc.iter_mut().zip(evaluate_unchecked(f, &m)) {
            a.add(y);
        }
    }
    let scale = 1.0 / f64::powi(2.0, v as i32);
    Ok(acc.iter().map(|a| a.total() * scale).collect())
}

/// `(1/n!) Σ_π ⟪f (πX)^⊗⟫`, where `πX` permutes the first `f.n()` rows.
pub fn row_permutation_average(f: &CoefficientFamily, x: &SampleMatrix) -> Result<Vec<f64>> {
    check_fits(f, x)?;
    let n = f.n();
    if n > MAX_SYMMETRIZE_DEGREE {
        return Err(Error::Guard {
            what: "row permutation count",
            value: n,
            limit: MAX_SYMMETRIZE_DEGREE,
        });
    }
    let mut acc = vec![NeumaierSum::default(); f.dim()];
    let mut count = 0usize;
    for perm in (0..n).permutations(n) {
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .map(|r| if r < n { x.row(perm[r]).to_vec() } else { x.row(r).to_vec() })
            .collect();
        let m = SampleMatrix::from_rows(SampleMode::Decoupled, rows)?;
        for (a, y) in acc.iter_mut().zip(evaluate_unchecked(f, &m)) {
            a.add(y);
        }
        count += 1;
    }
    Ok(acc.iter().map(|a| a.total() / count as f64).collect())
}
