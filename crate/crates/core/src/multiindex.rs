//! Multi-indices, index tuples and finitely supported coefficient families,
//! together with the three symmetrizers acting on them:
//!
//! * `S` ([`CoefficientFamily::symmetrize`]) averages a coefficient over all
//!   permutations of its arguments within one multi-index;
//! * `D` ([`nullify_diagonals`]) removes every entry whose tuple repeats a
//!   coordinate;
//! * `A` ([`CoefficientFamily::index_average`]) averages, after contraction,
//!   over all multi-indices of the same cardinality.
//!
//! A coefficient family stores `f_α(i)` for a multi-index `α ⊂ [1, n]` and an
//! index tuple `i` of length `|α|` whose `j`-th entry is the coordinate used
//! by the `j`-th set slot of `α`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hexfloat;

pub const MAX_SLOTS: usize = 32;
pub const MAX_COORD: usize = 64;
/// `symmetrize` materializes `|α|!` permutations.
pub const MAX_SYMMETRIZE_DEGREE: usize = 8;
/// `index_average` enumerates all `C(n, k)` subsets.
pub const MAX_AVERAGE_SLOTS: usize = 20;

/// A subset of the slot positions `[1, n]`, stored as a bit vector.
///
/// Slot `s` (1-based) corresponds to bit `s - 1`. The derived ordering is the
/// bit order used for canonical accumulation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    bits: u32,
    n: u8,
}

impl MultiIndex {
    pub fn new(n: usize, bits: u32) -> Result<Self> {
        check_slots(n)?;
        if n < 32 && bits >> n != 0 {
            return Err(Error::DimensionMismatch(format!(
                "bits {bits:#b} exceed slot count {n}"
            )));
        }
        Ok(Self { bits, n: n as u8 })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, 0)
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new(n, low_bits(n))
    }

    /// The main-tetrahedron index set `[1, k]`.
    pub fn initial(n: usize, k: usize) -> Result<Self> {
        if k > n {
            return Err(Error::DimensionMismatch(format!("[1,{k}] is not inside [1,{n}]")));
        }
        Self::new(n, low_bits(k))
    }

    /// Builds a multi-index from 1-based slot positions.
    pub fn from_slots(n: usize, slots: &[usize]) -> Result<Self> {
        check_slots(n)?;
        let mut bits = 0u32;
        for &s in slots {
            if s == 0 || s > n {
                return Err(Error::DimensionMismatch(format!("slot {s} outside [1,{n}]")));
            }
            bits |= 1 << (s - 1);
        }
        Self::new(n, bits)
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn n(self) -> usize {
        self.n as usize
    }

    /// `|α|`.
    pub fn card(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn contains(self, slot: usize) -> bool {
        slot >= 1 && slot <= self.n() && self.bits & (1 << (slot - 1)) != 0
    }

    /// `α′ = [1, n] \ α`.
    pub fn complement(self) -> Self {
        Self {
            bits: !self.bits & low_bits(self.n()),
            n: self.n,
        }
    }

    /// `α* = max α`, with `max ∅ = 0`.
    pub fn max_slot(self) -> usize {
        if self.bits == 0 {
            0
        } else {
            32 - self.bits.leading_zeros() as usize
        }
    }

    pub fn intersection(self, other: Self) -> Self {
        Self {
            bits: self.bits & other.bits,
            n: self.n.max(other.n),
        }
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            bits: self.bits | other.bits,
            n: self.n.max(other.n),
        }
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.bits & !other.bits == 0
    }

    /// Removes one slot (no-op when absent).
    pub fn without(self, slot: usize) -> Self {
        let mask = if (1..=32).contains(&slot) { 1u32 << (slot - 1) } else { 0 };
        Self {
            bits: self.bits & !mask,
            n: self.n,
        }
    }

    /// Same slot set viewed inside a (possibly larger) ambient `[1, n]`.
    pub fn with_slot_count(self, n: usize) -> Result<Self> {
        Self::new(n, self.bits)
    }

    /// Set slots in increasing order (1-based).
    pub fn slots(self) -> impl Iterator<Item = usize> {
        let mut rest = self.bits;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let s = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(s + 1)
            }
        })
    }

    /// All `α ⊂ [1, n]` in bit order.
    pub fn all_subsets(n: usize) -> Result<impl Iterator<Item = MultiIndex>> {
        check_slots(n)?;
        if n > MAX_AVERAGE_SLOTS {
            return Err(Error::Guard {
                what: "slot count for subset enumeration",
                value: n,
                limit: MAX_AVERAGE_SLOTS,
            });
        }
        let n8 = n as u8;
        Ok((0u32..(1u32 << n)).map(move |bits| MultiIndex { bits, n: n8 }))
    }

    /// All `α ⊂ [1, n]` with `|α| = k`, in bit order.
    pub fn subsets_of_size(n: usize, k: usize) -> Result<Vec<MultiIndex>> {
        Ok(Self::all_subsets(n)?.filter(|a| a.card() == k).collect())
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (j, s) in self.slots().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, "}}/{}", self.n)
    }
}

fn low_bits(k: usize) -> u32 {
    if k >= 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

fn check_slots(n: usize) -> Result<()> {
    if n > MAX_SLOTS {
        Err(Error::SlotLimit(n))
    } else {
        Ok(())
    }
}

/// The ordered coordinates used by the set slots of a multi-index
/// (the restricted index vector).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct IndexTuple(Vec<u32>);

impl IndexTuple {
    pub fn new(coords: Vec<u32>) -> Self {
        Self(coords)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All entries pairwise distinct.
    pub fn is_off_diagonal(&self) -> bool {
        let mut seen = 0u128;
        for &c in &self.0 {
            let bit = 1u128 << (c.min(127));
            if seen & bit != 0 {
                return false;
            }
            seen |= bit;
        }
        true
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.0.windows(2).all(|w| w[0] < w[1])
    }

    /// `t ∘ σ`: position `j` of the result holds `t[perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&p| self.0[p]).collect())
    }

    pub fn sorted(&self) -> Self {
        let mut v = self.0.clone();
        v.sort_unstable();
        Self(v)
    }

    /// Distinct rearrangements of the tuple, in lexicographic order.
    pub fn distinct_permutations(&self) -> Vec<IndexTuple> {
        let k = self.0.len();
        let set: BTreeSet<IndexTuple> = (0..k).permutations(k).map(|p| self.permuted(&p)).collect();
        set.into_iter().collect()
    }

    pub fn max_coord(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl From<Vec<u32>> for IndexTuple {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// A point of `N̄^n` supported on the set slots of a multi-index: unset
/// slots hold `0`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SlotAssignment {
    values: Vec<u32>,
}

impl SlotAssignment {
    pub fn new(values: Vec<u32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Coordinate at a 1-based slot (`0` when unset).
    pub fn at(&self, slot: usize) -> u32 {
        self.values.get(slot - 1).copied().unwrap_or(0)
    }
}

/// The stretching map `s_α`: places the entries of a length-`|α|` tuple at
/// the set slots of `α`, in order.
pub fn stretch(alpha: MultiIndex, tuple: &IndexTuple) -> Result<SlotAssignment> {
    if tuple.len() != alpha.card() {
        return Err(Error::LengthMismatch {
            expected: alpha.card(),
            got: tuple.len(),
        });
    }
    let mut values = vec![0u32; alpha.n()];
    for (slot, &c) in alpha.slots().zip(tuple.as_slice()) {
        if c == 0 {
            return Err(Error::CoordinateOutOfRange { coord: 0, bound: MAX_COORD });
        }
        values[slot - 1] = c;
    }
    Ok(SlotAssignment { values })
}

/// The contracting map `c_α`: drops the unset slots.
pub fn contract(alpha: MultiIndex, assignment: &SlotAssignment) -> Result<IndexTuple> {
    if assignment.values.len() != alpha.n() {
        return Err(Error::LengthMismatch {
            expected: alpha.n(),
            got: assignment.values.len(),
        });
    }
    let mut out = Vec::with_capacity(alpha.card());
    for (j, &c) in assignment.values.iter().enumerate() {
        let set = alpha.contains(j + 1);
        match (set, c) {
            (true, 0) => {
                return Err(Error::DomainMismatch(format!("slot {} is in α but unassigned", j + 1)))
            }
            (false, c) if c != 0 => {
                return Err(Error::DomainMismatch(format!("slot {} is outside α but assigned", j + 1)))
            }
            (true, c) => out.push(c),
            _ => {}
        }
    }
    Ok(IndexTuple(out))
}

type Key = (MultiIndex, IndexTuple);

/// Storage shared by [`CoefficientFamily`] and [`RawFamily`].
#[derive(Clone, PartialEq, Debug)]
struct Store {
    n: usize,
    coord_bound: usize,
    dim: usize,
    empty: Vec<f64>,
    entries: BTreeMap<Key, Vec<f64>>,
}

impl Store {
    fn new(n: usize, coord_bound: usize, dim: usize) -> Result<Self> {
        check_slots(n)?;
        if coord_bound > MAX_COORD {
            return Err(Error::Guard {
                what: "coordinate bound",
                value: coord_bound,
                limit: MAX_COORD,
            });
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("coefficient dimension must be positive".into()));
        }
        Ok(Self {
            n,
            coord_bound,
            dim,
            empty: vec![0.0; dim],
            entries: BTreeMap::new(),
        })
    }

    fn check_key(&self, alpha: MultiIndex, tuple: &IndexTuple) -> Result<MultiIndex> {
        if alpha.max_slot() > self.n {
            return Err(Error::DimensionMismatch(format!(
                "multi-index {alpha:?} outside [1,{}]",
                self.n
            )));
        }
        if tuple.len() != alpha.card() {
            return Err(Error::LengthMismatch {
                expected: alpha.card(),
                got: tuple.len(),
            });
        }
        for &c in tuple.as_slice() {
            if c == 0 || c as usize > self.coord_bound {
                return Err(Error::CoordinateOutOfRange {
                    coord: c,
                    bound: self.coord_bound,
                });
            }
        }
        alpha.with_slot_count(self.n)
    }

    fn check_value(&self, value: &[f64]) -> Result<()> {
        if value.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(())
    }

    fn put(&mut self, key: Key, value: Vec<f64>) {
        if value.iter().all(|&v| v == 0.0) {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, value);
        }
    }

    fn accumulate(&mut self, key: Key, value: &[f64]) {
        let slot = self.entries.entry(key.clone()).or_insert_with(|| vec![0.0; value.len()]);
        for (s, v) in slot.iter_mut().zip(value) {
            *s += v;
        }
        if slot.iter().all(|&v| v == 0.0) {
            self.entries.remove(&key);
        }
    }

    fn empty_like(&self) -> Self {
        Self {
            n: self.n,
            coord_bound: self.coord_bound,
            dim: self.dim,
            empty: self.empty.clone(),
            entries: BTreeMap::new(),
        }
    }

    fn max_degree(&self) -> usize {
        self.entries.keys().map(|(a, _)| a.card()).max().unwrap_or(0)
    }

    fn symmetrize(&self) -> Result<Self> {
        let degree = self.max_degree();
        if degree > MAX_SYMMETRIZE_DEGREE {
            return Err(Error::Guard {
                what: "symmetrization degree",
                value: degree,
                limit: MAX_SYMMETRIZE_DEGREE,
            });
        }
        // Orbit sums keyed by the sorted tuple.
        let mut orbits: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for ((alpha, tuple), value) in &self.entries {
            let slot = orbits
                .entry((*alpha, tuple.sorted()))
                .or_insert_with(|| vec![0.0; self.dim]);
            for (s, v) in slot.iter_mut().zip(value) {
                *s += v;
            }
        }
        let mut out = self.empty_like();
        for ((alpha, sorted), sum) in orbits {
            let k = alpha.card();
            let multiplicity: f64 = sorted
                .as_slice()
                .iter()
                .dedup_with_count()
                .map(|(m, _)| factorial(m))
                .product();
            let scale = multiplicity / factorial(k);
            let value: Vec<f64> = sum.iter().map(|s| s * scale).collect();
            for t in sorted.distinct_permutations() {
                out.put((alpha, t), value.clone());
            }
        }
        Ok(out)
    }

    fn index_average(&self) -> Result<Self> {
        if self.n > MAX_AVERAGE_SLOTS {
            return Err(Error::Guard {
                what: "slot count for index averaging",
                value: self.n,
                limit: MAX_AVERAGE_SLOTS,
            });
        }
        let slices = self.contracted_averages();
        let mut out = self.empty_like();
        for (k, slice) in slices.iter().enumerate().skip(1) {
            if slice.is_empty() {
                continue;
            }
            for alpha in MultiIndex::subsets_of_size(self.n, k)? {
                for (t, v) in slice {
                    out.put((alpha, t.clone()), v.clone());
                }
            }
        }
        Ok(out)
    }

    /// `A′_k(f)(i) = C(n,k)^{-1} Σ_{|α|=k} f_α(s_α i)` for every `k`.
    fn contracted_averages(&self) -> Vec<BTreeMap<IndexTuple, Vec<f64>>> {
        let mut sums: Vec<BTreeMap<IndexTuple, Vec<f64>>> = vec![BTreeMap::new(); self.n + 1];
        for ((alpha, tuple), value) in &self.entries {
            let slot = sums[alpha.card()]
                .entry(tuple.clone())
                .or_insert_with(|| vec![0.0; self.dim]);
            for (s, v) in slot.iter_mut().zip(value) {
                *s += v;
            }
        }
        for (k, slice) in sums.iter_mut().enumerate() {
            let c = binomial(self.n, k);
            slice.retain(|_, v| {
                for x in v.iter_mut() {
                    *x /= c;
                }
                v.iter().any(|&x| x != 0.0)
            });
        }
        sums
    }

    fn without_diagonals(&self) -> Self {
        let mut out = self.empty_like();
        for (key, value) in &self.entries {
            if key.1.is_off_diagonal() {
                out.entries.insert(key.clone(), value.clone());
            }
        }
        out
    }

    fn plain_sum(&self) -> Vec<f64> {
        let mut acc: Vec<crate::numeric::NeumaierSum> = vec![Default::default(); self.dim];
        for (a, e) in acc.iter_mut().zip(&self.empty) {
            a.add(*e);
        }
        for value in self.entries.values() {
            for (a, v) in acc.iter_mut().zip(value) {
                a.add(*v);
            }
        }
        acc.iter().map(|a| a.total()).collect()
    }

    fn pointwise_product(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "product of families with (n, d) = ({}, {}) and ({}, {})",
                self.n, self.dim, other.n, other.dim
            )));
        }
        let mut out = self.empty_like();
        out.coord_bound = self.coord_bound.max(other.coord_bound);
        out.empty = self.empty.iter().zip(&other.empty).map(|(a, b)| a * b).collect();
        for (key, a) in &self.entries {
            if let Some(b) = other.entries.get(key) {
                out.put(key.clone(), a.iter().zip(b).map(|(x, y)| x * y).collect());
            }
        }
        Ok(out)
    }

    fn map_degrees(&self, scale: impl Fn(usize) -> f64) -> Self {
        let mut out = self.empty_like();
        let s0 = scale(0);
        out.empty = self.empty.iter().map(|e| e * s0).collect();
        for (key, value) in &self.entries {
            let s = scale(key.0.card());
            out.put(key.clone(), value.iter().map(|v| v * s).collect());
        }
        out
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for j in 0..k {
        c = c * (n - j) as f64 / (j + 1) as f64;
    }
    c.round()
}

/// A finitely supported family `f = (f_α)` with vector coefficients in `R^d`
/// that vanishes on diagonals.
///
/// Zero coefficients are never stored, so `support_len` is exact.
#[derive(Clone, PartialEq, Debug)]
pub struct CoefficientFamily {
    store: Store,
    tetrahedral: bool,
}

impl CoefficientFamily {
    /// An all-zero family on `n` slots, coordinates `1..=coord_bound` and
    /// coefficient dimension `dim`.
    pub fn new(n: usize, coord_bound: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            store: Store::new(n, coord_bound, dim)?,
            tetrahedral: false,
        })
    }

    /// A family flagged tetrahedral: inserts are restricted to `α = [1, |α|]`
    /// with strictly increasing tuples.
    pub fn new_tetrahedral(n: usize, coord_bound: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            store: Store::new(n, coord_bound, dim)?,
            tetrahedral: true,
        })
    }

    pub fn n(&self) -> usize {
        self.store.n
    }

    pub fn coord_bound(&self) -> usize {
        self.store.coord_bound
    }

    pub fn dim(&self) -> usize {
        self.store.dim
    }

    pub fn is_flagged_tetrahedral(&self) -> bool {
        self.tetrahedral
    }

    pub fn empty_term(&self) -> &[f64] {
        &self.store.empty
    }

    pub fn set_empty_term(&mut self, value: Vec<f64>) -> Result<()> {
        self.store.check_value(&value)?;
        self.store.empty = value;
        Ok(())
    }

    /// Sets `f_α(tuple)`; a zero value deletes the entry. Diagonal tuples are
    /// rejected.
    pub fn insert(&mut self, alpha: MultiIndex, tuple: impl Into<IndexTuple>, value: Vec<f64>) -> Result<()> {
        let tuple = tuple.into();
        let alpha = self.check_insert(alpha, &tuple)?;
        self.store.check_value(&value)?;
        self.store.put((alpha, tuple), value);
        Ok(())
    }

    /// Adds `value` to `f_α(tuple)`.
    pub fn add(&mut self, alpha: MultiIndex, tuple: impl Into<IndexTuple>, value: &[f64]) -> Result<()> {
        let tuple = tuple.into();
        let alpha = self.check_insert(alpha, &tuple)?;
        self.store.check_value(value)?;
        self.store.accumulate((alpha, tuple), value);
        Ok(())
    }

    fn check_insert(&self, alpha: MultiIndex, tuple: &IndexTuple) -> Result<MultiIndex> {
        let alpha = self.store.check_key(alpha, tuple)?;
        if !tuple.is_off_diagonal() {
            return Err(Error::Diagonal(tuple.as_slice().to_vec()));
        }
        if self.tetrahedral {
            if alpha != MultiIndex::initial(self.n(), alpha.card())? {
                return Err(Error::NotTetrahedral(format!("{alpha:?} is not [1,{}]", alpha.card())));
            }
            if !tuple.is_strictly_increasing() {
                return Err(Error::NotTetrahedral(format!("{:?} is not increasing", tuple.as_slice())));
            }
        }
        Ok(alpha)
    }

    pub fn get(&self, alpha: MultiIndex, tuple: &IndexTuple) -> Option<&[f64]> {
        let alpha = alpha.with_slot_count(self.n()).ok()?;
        self.store.entries.get(&(alpha, tuple.clone())).map(Vec::as_slice)
    }

    /// Entries in canonical order: `α` in bit order, tuples lexicographic.
    pub fn entries(&self) -> impl Iterator<Item = (MultiIndex, &IndexTuple, &[f64])> {
        self.store.entries.iter().map(|((a, t), v)| (*a, t, v.as_slice()))
    }

    pub fn support_len(&self) -> usize {
        self.store.entries.len()
    }

    /// Largest `|α|` in the support (0 for constant families).
    pub fn degree(&self) -> usize {
        self.store.max_degree()
    }

    /// Largest coordinate used by any stored tuple.
    pub fn max_coord_used(&self) -> usize {
        self.store.entries.keys().map(|(_, t)| t.max_coord() as usize).max().unwrap_or(0)
    }

    /// `S(f) = f̂`, with `f̂_α = (1/|α|!) Σ_σ f_α ∘ σ`.
    pub fn symmetrize(&self) -> Result<Self> {
        Ok(Self {
            store: self.store.symmetrize()?,
            tetrahedral: false,
        })
    }

    /// `A(f) = A″ A′ (f)`.
    pub fn index_average(&self) -> Result<Self> {
        Ok(Self {
            store: self.store.index_average()?,
            tetrahedral: false,
        })
    }

    /// `A′(f)`: one contracted homogeneous slice per degree `k = 0..=n`.
    pub fn contracted_averages(&self) -> Result<Vec<HomogeneousSlice>> {
        if self.n() > MAX_AVERAGE_SLOTS {
            return Err(Error::Guard {
                what: "slot count for index averaging",
                value: self.n(),
                limit: MAX_AVERAGE_SLOTS,
            });
        }
        let mut out = Vec::with_capacity(self.n() + 1);
        for (k, values) in self.store.contracted_averages().into_iter().enumerate() {
            let mut slice = HomogeneousSlice::new(k, self.dim());
            if k == 0 {
                slice.insert(IndexTuple::default(), self.store.empty.clone())?;
            }
            for (t, v) in values {
                slice.insert(t, v)?;
            }
            out.push(slice);
        }
        Ok(out)
    }

    /// `⟪f⟫`: the plain sum of every coefficient, including `f_∅`.
    pub fn plain_sum(&self) -> Vec<f64> {
        self.store.plain_sum()
    }

    /// Coordinatewise product of coefficients at equal keys.
    pub fn pointwise_product(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            store: self.store.pointwise_product(&other.store)?,
            tetrahedral: false,
        })
    }

    /// Multiplies every degree-`k` coefficient (including `f_∅` for `k = 0`)
    /// by `scale(k)`.
    pub fn scale_by_degree(&self, scale: impl Fn(usize) -> f64) -> Self {
        Self {
            store: self.store.map_degrees(scale),
            tetrahedral: self.tetrahedral,
        }
    }

    /// The same coefficients viewed on a larger slot count or coordinate
    /// bound.
    pub fn embedded(&self, n: usize, coord_bound: usize) -> Result<Self> {
        if n < self.n() || coord_bound < self.coord_bound() {
            return Err(Error::DimensionMismatch("embedding must not shrink the family".into()));
        }
        let mut out = Self {
            store: Store::new(n, coord_bound, self.dim())?,
            tetrahedral: self.tetrahedral,
        };
        out.store.empty = self.store.empty.clone();
        for ((a, t), v) in &self.store.entries {
            out.store.entries.insert((a.with_slot_count(n)?, t.clone()), v.clone());
        }
        Ok(out)
    }

    /// Exact check that `f_α ∘ σ = f_α` for every stored `α` and permutation.
    pub fn is_symmetric(&self) -> bool {
        self.store.entries.iter().all(|((alpha, tuple), value)| {
            tuple
                .distinct_permutations()
                .iter()
                .all(|t| self.store.entries.get(&(*alpha, t.clone())) == Some(value))
        })
    }

    /// Exact check that the support lies on the main tetrahedron.
    pub fn is_tetrahedral(&self) -> bool {
        self.store.entries.keys().all(|(alpha, tuple)| {
            alpha.bits() == low_bits(alpha.card()) && tuple.is_strictly_increasing()
        })
    }

    /// Entries sit only on `α = [1, |α|]` (the layout used by homogeneous
    /// slices).
    pub fn is_initial_layout(&self) -> bool {
        self.store.entries.keys().all(|(alpha, _)| alpha.bits() == low_bits(alpha.card()))
    }

    /// Splits an initial-layout family into its homogeneous slices
    /// `f_0, ..., f_degree`.
    pub fn homogeneous_slices(&self) -> Result<Vec<HomogeneousSlice>> {
        if !self.is_initial_layout() {
            return Err(Error::InvalidParameter(
                "family must be supported on α = [1, k] to split into homogeneous slices".into(),
            ));
        }
        let mut out: Vec<HomogeneousSlice> =
            (0..=self.degree()).map(|k| HomogeneousSlice::new(k, self.dim())).collect();
        out[0].insert(IndexTuple::default(), self.store.empty.clone())?;
        for ((alpha, tuple), value) in &self.store.entries {
            out[alpha.card()].insert(tuple.clone(), value.clone())?;
        }
        Ok(out)
    }

    /// Serializes to the JSON exchange format; floats are hex-float strings.
    pub fn to_json(&self) -> String {
        let doc = FamilyJson {
            n: self.n(),
            coord_bound: self.coord_bound(),
            d: self.dim(),
            empty: self.store.empty.iter().map(|&x| hexfloat::format(x)).collect(),
            entries: self
                .store
                .entries
                .iter()
                .map(|((a, t), v)| EntryJson {
                    alpha: a.slots().collect(),
                    tuple: t.as_slice().to_vec(),
                    value: v.iter().map(|&x| hexfloat::format(x)).collect(),
                })
                .collect(),
            tetrahedral: self.tetrahedral.then_some(true),
        };
        serde_json::to_string(&doc).expect("family JSON is always serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FamilyJson = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        let mut family = if doc.tetrahedral.unwrap_or(false) {
            Self::new_tetrahedral(doc.n, doc.coord_bound, doc.d)?
        } else {
            Self::new(doc.n, doc.coord_bound, doc.d)?
        };
        let parse_vec = |v: &[String]| v.iter().map(|s| hexfloat::parse(s)).collect::<Result<Vec<f64>>>();
        family.set_empty_term(parse_vec(&doc.empty)?)?;
        for e in doc.entries {
            let alpha = MultiIndex::from_slots(doc.n, &e.alpha)?;
            family.insert(alpha, e.tuple, parse_vec(&e.value)?)?;
        }
        Ok(family)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyJson {
    n: usize,
    #[serde(rename = "N")]
    coord_bound: usize,
    d: usize,
    empty: Vec<String>,
    entries: Vec<EntryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tetrahedral: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryJson {
    alpha: Vec<usize>,
    tuple: Vec<u32>,
    value: Vec<String>,
}

/// A sparse map `(α, tuple) → R^d` that may touch diagonals; the ingestion
/// side of [`nullify_diagonals`].
#[derive(Clone, PartialEq, Debug)]
pub struct RawFamily {
    store: Store,
}

impl RawFamily {
    pub fn new(n: usize, coord_bound: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            store: Store::new(n, coord_bound, dim)?,
        })
    }

    pub fn set_empty_term(&mut self, value: Vec<f64>) -> Result<()> {
        self.store.check_value(&value)?;
        self.store.empty = value;
        Ok(())
    }

    pub fn insert(&mut self, alpha: MultiIndex, tuple: impl Into<IndexTuple>, value: Vec<f64>) -> Result<()> {
        let tuple = tuple.into();
        let alpha = self.store.check_key(alpha, &tuple)?;
        self.store.check_value(&value)?;
        self.store.put((alpha, tuple), value);
        Ok(())
    }

    pub fn get(&self, alpha: MultiIndex, tuple: &IndexTuple) -> Option<&[f64]> {
        let alpha = alpha.with_slot_count(self.store.n).ok()?;
        self.store.entries.get(&(alpha, tuple.clone())).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (MultiIndex, &IndexTuple, &[f64])> {
        self.store.entries.iter().map(|((a, t), v)| (*a, t, v.as_slice()))
    }

    pub fn empty_term(&self) -> &[f64] {
        &self.store.empty
    }

    pub fn support_len(&self) -> usize {
        self.store.entries.len()
    }

    /// `S` on raw maps (diagonal tuples average over their repeated
    /// arrangements with the right multiplicity).
    pub fn symmetrize(&self) -> Result<Self> {
        Ok(Self {
            store: self.store.symmetrize()?,
        })
    }

    /// `A` on raw maps.
    pub fn index_average(&self) -> Result<Self> {
        Ok(Self {
            store: self.store.index_average()?,
        })
    }

    /// `D` on raw maps, staying in the raw representation.
    pub fn nullify_diagonals(&self) -> Self {
        Self {
            store: self.store.without_diagonals(),
        }
    }

    pub fn pointwise_product(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            store: self.store.pointwise_product(&other.store)?,
        })
    }

    pub fn plain_sum(&self) -> Vec<f64> {
        self.store.plain_sum()
    }
}

impl From<&CoefficientFamily> for RawFamily {
    fn from(f: &CoefficientFamily) -> Self {
        Self { store: f.store.clone() }
    }
}

/// `D`: drops every diagonal-touching entry, producing a valid family.
pub fn nullify_diagonals(raw: &RawFamily) -> CoefficientFamily {
    CoefficientFamily {
        store: raw.store.without_diagonals(),
        tetrahedral: false,
    }
}

/// A homogeneous degree-`k` component `f_k : N^k → R^d`.
#[derive(Clone, PartialEq, Debug)]
pub struct HomogeneousSlice {
    k: usize,
    dim: usize,
    values: BTreeMap<IndexTuple, Vec<f64>>,
}

impl HomogeneousSlice {
    pub fn new(k: usize, dim: usize) -> Self {
        Self {
            k,
            dim,
            values: BTreeMap::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, tuple: impl Into<IndexTuple>, value: Vec<f64>) -> Result<()> {
        let tuple = tuple.into();
        if tuple.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                got: tuple.len(),
            });
        }
        if !tuple.is_off_diagonal() {
            return Err(Error::Diagonal(tuple.as_slice().to_vec()));
        }
        if value.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: value.len(),
            });
        }
        if value.iter().all(|&v| v == 0.0) {
            self.values.remove(&tuple);
        } else {
            self.values.insert(tuple, value);
        }
        Ok(())
    }

    pub fn get(&self, tuple: &IndexTuple) -> Option<&[f64]> {
        self.values.get(tuple).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IndexTuple, &[f64])> {
        self.values.iter().map(|(t, v)| (t, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_coord_used(&self) -> usize {
        self.values.keys().map(|t| t.max_coord() as usize).max().unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.values.iter().all(|(t, v)| {
            t.distinct_permutations()
                .iter()
                .all(|p| self.values.get(p) == Some(v))
        })
    }

    pub fn is_tetrahedral(&self) -> bool {
        self.values.keys().all(IndexTuple::is_strictly_increasing)
    }

    /// Places the slice on `α = [1, k]` inside a family with `n` slots.
    pub fn to_family(&self, n: usize, coord_bound: usize) -> Result<CoefficientFamily> {
        let mut f = CoefficientFamily::new(n, coord_bound, self.dim)?;
        if self.k == 0 {
            if let Some(v) = self.values.get(&IndexTuple::default()) {
                f.set_empty_term(v.clone())?;
            }
            return Ok(f);
        }
        let alpha = MultiIndex::initial(n, self.k)?;
        for (t, v) in &self.values {
            f.insert(alpha, t.clone(), v.clone())?;
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(n: usize, slots: &[usize]) -> MultiIndex {
        MultiIndex::from_slots(n, slots).unwrap()
    }

    #[test]
    fn multi_index_basics() {
        let a = mi(5, &[2, 5]);
        assert_eq!(a.card(), 2);
        assert_eq!(a.max_slot(), 5);
        assert_eq!(a.slots().collect::<Vec<_>>(), vec![2, 5]);
        let c = a.complement();
        assert_eq!(c.slots().collect::<Vec<_>>(), vec![1, 3, 4]);
        assert!(a.intersection(c).is_empty());
        assert_eq!(a.union(c), MultiIndex::full(5).unwrap());
        assert_eq!(MultiIndex::empty(4).unwrap().max_slot(), 0);
        assert!(MultiIndex::new(33, 0).is_err());
        assert!(MultiIndex::new(3, 0b1000).is_err());
        assert_eq!(MultiIndex::full(32).unwrap().card(), 32);
    }

    #[test]
    fn stretch_and_contract() {
        let a = mi(5, &[2, 5]);
        let s = stretch(a, &IndexTuple::new(vec![7, 3])).unwrap();
        assert_eq!(s.values(), &[0, 7, 0, 0, 3]);
        assert_eq!(contract(a, &s).unwrap().as_slice(), &[7, 3]);

        let e = MultiIndex::empty(3).unwrap();
        let s = stretch(e, &IndexTuple::default()).unwrap();
        assert_eq!(s.values(), &[0, 0, 0]);
        assert!(contract(e, &s).unwrap().is_empty());

        let one = mi(1, &[1]);
        assert_eq!(contract(one, &SlotAssignment::new(vec![4])).unwrap().as_slice(), &[4]);

        assert!(stretch(a, &IndexTuple::new(vec![1])).is_err());
        assert!(contract(a, &SlotAssignment::new(vec![1, 7, 0, 0, 3])).is_err());
        assert!(contract(a, &SlotAssignment::new(vec![0, 7, 0, 0, 0])).is_err());
    }

    #[test]
    fn insert_rejects_diagonals_and_bad_shapes() {
        let mut f = CoefficientFamily::new(3, 4, 1).unwrap();
        let a = mi(3, &[1, 2]);
        assert!(matches!(f.insert(a, vec![3, 3], vec![1.0]), Err(Error::Diagonal(_))));
        assert!(f.insert(a, vec![3], vec![1.0]).is_err());
        assert!(f.insert(a, vec![3, 5], vec![1.0]).is_err());
        assert!(f.insert(a, vec![1, 2], vec![1.0, 2.0]).is_err());
        f.insert(a, vec![1, 2], vec![1.0]).unwrap();
        assert_eq!(f.support_len(), 1);
        f.insert(a, vec![1, 2], vec![0.0]).unwrap();
        assert_eq!(f.support_len(), 0);
    }

    #[test]
    fn tetrahedral_flag_enforced() {
        let mut f = CoefficientFamily::new_tetrahedral(3, 4, 1).unwrap();
        assert!(f.insert(mi(3, &[1, 3]), vec![1, 2], vec![1.0]).is_err());
        assert!(f.insert(mi(3, &[1, 2]), vec![2, 1], vec![1.0]).is_err());
        f.insert(mi(3, &[1, 2]), vec![1, 3], vec![1.0]).unwrap();
        f.insert(mi(3, &[1]), vec![4], vec![2.0]).unwrap();
        assert!(f.is_tetrahedral());
    }

    #[test]
    fn symmetrize_two_permutation_average() {
        let mut f = CoefficientFamily::new(2, 2, 1).unwrap();
        let a = mi(2, &[1, 2]);
        f.insert(a, vec![1, 2], vec![1.0]).unwrap();
        assert!(!f.is_symmetric());
        let s = f.symmetrize().unwrap();
        assert_eq!(s.get(a, &IndexTuple::new(vec![1, 2])), Some(&[0.5][..]));
        assert_eq!(s.get(a, &IndexTuple::new(vec![2, 1])), Some(&[0.5][..]));
        assert!(s.is_symmetric());
        assert_eq!(s.symmetrize().unwrap(), s);
    }

    #[test]
    fn symmetrize_degree_guard() {
        let mut f = CoefficientFamily::new(9, 9, 1).unwrap();
        f.insert(MultiIndex::full(9).unwrap(), (1..=9).collect::<Vec<u32>>(), vec![1.0]).unwrap();
        assert!(matches!(f.symmetrize(), Err(Error::Guard { .. })));
    }

    #[test]
    fn nullify_diagonals_drops_repeats() {
        let mut raw = RawFamily::new(2, 3, 1).unwrap();
        let a = mi(2, &[1, 2]);
        raw.insert(a, vec![3, 3], vec![1.0]).unwrap();
        raw.insert(a, vec![1, 3], vec![2.0]).unwrap();
        let f = nullify_diagonals(&raw);
        assert_eq!(f.support_len(), 1);
        assert_eq!(f.get(a, &IndexTuple::new(vec![1, 3])), Some(&[2.0][..]));
        let again = nullify_diagonals(&RawFamily::from(&f));
        assert_eq!(again, f);
    }

    #[test]
    fn index_average_two_singletons() {
        let mut f = CoefficientFamily::new(2, 3, 1).unwrap();
        let g = [1.0, 2.0, 3.0];
        let h = [5.0, -1.0, 0.5];
        for i in 0..3 {
            f.insert(mi(2, &[1]), vec![i as u32 + 1], vec![g[i]]).unwrap();
            f.insert(mi(2, &[2]), vec![i as u32 + 1], vec![h[i]]).unwrap();
        }
        let a = f.index_average().unwrap();
        for i in 0..3 {
            let want = (g[i] + h[i]) / 2.0;
            let t = IndexTuple::new(vec![i as u32 + 1]);
            assert_eq!(a.get(mi(2, &[1]), &t), Some(&[want][..]));
            assert_eq!(a.get(mi(2, &[2]), &t), Some(&[want][..]));
        }
        assert_eq!(a.index_average().unwrap(), a);
    }

    #[test]
    fn index_average_guard() {
        let f = CoefficientFamily::new(21, 2, 1).unwrap();
        assert!(matches!(f.index_average(), Err(Error::Guard { .. })));
    }

    #[test]
    fn homogeneous_slices_round_trip() {
        let mut s = HomogeneousSlice::new(2, 1);
        s.insert(vec![1, 2], vec![1.0]).unwrap();
        s.insert(vec![2, 1], vec![1.0]).unwrap();
        assert!(s.is_symmetric());
        assert!(s.insert(vec![2, 2], vec![1.0]).is_err());
        let f = s.to_family(3, 2).unwrap();
        let slices = f.homogeneous_slices().unwrap();
        assert_eq!(slices[2], s);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut f = CoefficientFamily::new(3, 4, 2).unwrap();
        f.set_empty_term(vec![0.1, -1e-300]).unwrap();
        f.insert(mi(3, &[1, 3]), vec![4, 2], vec![std::f64::consts::PI, 1.0 / 3.0]).unwrap();
        f.insert(mi(3, &[2]), vec![1], vec![f64::MIN_POSITIVE / 8.0, 0.0]).unwrap();
        let text = f.to_json();
        assert!(text.contains("\"N\":4"));
        let back = CoefficientFamily::from_json(&text).unwrap();
        assert_eq!(back, f);
        assert!(CoefficientFamily::from_json("{\"n\":1}").is_err());
    }
}
