use rand::Rng;

use super::{Estimate, Expectation, ProbeReport, Verdict};
use crate::error::{Error, Result};
use crate::multiindex::factorial;
use crate::numeric::NeumaierSum;

/// Largest enumeration, in joint states, either side may require.
pub const MAX_ENUMERATION_STATES: u64 = 1 << 22;

/// A symmetric base law `ε·m` with `m` drawn from finitely many positive
/// magnitudes.
#[derive(Clone, PartialEq, Debug)]
pub struct BaseLaw {
    magnitudes: Vec<f64>,
    probs: Vec<f64>,
}

impl BaseLaw {
    pub fn new(magnitudes: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if magnitudes.is_empty() || magnitudes.len() != probs.len() {
            return Err(Error::LengthMismatch {
                expected: magnitudes.len().max(1),
                got: probs.len(),
            });
        }
        if magnitudes.iter().any(|&m| !(m > 0.0 && m.is_finite())) || probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidParameter("magnitudes and probabilities must be positive".into()));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("probabilities must sum to 1".into()));
        }
        Ok(Self { magnitudes, probs })
    }

    /// Plain Rademacher signs.
    pub fn rademacher() -> Self {
        Self {
            magnitudes: vec![1.0],
            probs: vec![1.0],
        }
    }

    /// Signs times a magnitude uniform on `{1, 2}`.
    pub fn two_level() -> Self {
        Self {
            magnitudes: vec![1.0, 2.0],
            probs: vec![0.5, 0.5],
        }
    }

    pub fn levels(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FamilyKind {
    /// Supported on strictly increasing tuples.
    Tetrahedral,
    /// `F(iπ; vπ) = F(i; v)` for every permutation `π`.
    Symmetric,
    General,
}

/// `F_k(i; v) = Π_j sign(v_j) · h(i, level(|v_1|), …, level(|v_k|))` on
/// off-diagonal `i ∈ [1, N]^k`. Oddness in every argument is what makes the
/// second-moment identity possible at all.
#[derive(Clone, PartialEq, Debug)]
pub struct FTable {
    k: usize,
    coords: usize,
    levels: usize,
    tuples: Vec<Vec<u32>>,
    /// `values[t * levels^k + code(level vector)]`.
    values: Vec<f64>,
}

fn off_diagonal_tuples(k: usize, coords: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t: Vec<u32>| {
                let used = t.clone();
                (1..=coords as u32).filter(move |c| !used.contains(c)).map(move |c| {
                    let mut t = t.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

fn level_vectors(k: usize, levels: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..levels.pow(k as u32)).map(move |mut code| {
        let mut v = vec![0; k];
        for slot in v.iter_mut().rev() {
            *slot = code % levels;
            code /= levels;
        }
        v
    })
}

impl FTable {
    pub fn new(k: usize, coords: usize, levels: usize, mut h: impl FnMut(&[u32], &[usize]) -> f64) -> Result<Self> {
        if k == 0 || k > coords {
            return Err(Error::InvalidParameter(format!("degree {k} needs 1 ≤ k ≤ N = {coords}")));
        }
        if levels == 0 {
            return Err(Error::InvalidParameter("at least one magnitude level".into()));
        }
        let tuples = off_diagonal_tuples(k, coords);
        let mut values = Vec::with_capacity(tuples.len() * levels.pow(k as u32));
        for t in &tuples {
            values.extend(level_vectors(k, levels).map(|lv| h(t, &lv)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite table value".into()));
        }
        Ok(Self {
            k,
            coords,
            levels,
            tuples,
            values,
        })
    }

    /// Entries uniform on `[-1, 1]`, shaped to `kind`.
    pub fn random<R: Rng + ?Sized>(k: usize, coords: usize, levels: usize, kind: FamilyKind, rng: &mut R) -> Result<Self> {
        let raw = Self::new(k, coords, levels, |_, _| rng.random_range(-1.0..=1.0))?;
        Ok(match kind {
            FamilyKind::General => raw,
            FamilyKind::Tetrahedral => Self::new(k, coords, levels, |t, lv| {
                if t.windows(2).all(|w| w[0] < w[1]) {
                    raw.h(t, lv)
                } else {
                    0.0
                }
            })?,
            FamilyKind::Symmetric => Self::new(k, coords, levels, |t, lv| {
                // Read the value at the sorted tuple, carrying levels along.
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by_key(|&j| t[j]);
                let st: Vec<u32> = order.iter().map(|&j| t[j]).collect();
                let sl: Vec<usize> = order.iter().map(|&j| lv[j]).collect();
                raw.h(&st, &sl)
            })?,
        })
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    fn code(&self, lv: &[usize]) -> usize {
        lv.iter().fold(0, |acc, &l| acc * self.levels + l)
    }

    fn tuple_index(&self, t: &[u32]) -> Option<usize> {
        self.tuples.binary_search_by(|probe| probe.as_slice().cmp(t)).ok()
    }

    /// `h(i, levels)`, zero on diagonal tuples.
    pub fn h(&self, t: &[u32], lv: &[usize]) -> f64 {
        match self.tuple_index(t) {
            Some(ti) => self.values[ti * self.levels.pow(self.k as u32) + self.code(lv)],
            None => 0.0,
        }
    }

    pub fn tuples(&self) -> &[Vec<u32>] {
        &self.tuples
    }

    pub fn is_tetrahedral(&self) -> bool {
        let block = self.levels.pow(self.k as u32);
        self.tuples
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.windows(2).all(|w| w[0] < w[1]))
            .all(|(ti, _)| self.values[ti * block..(ti + 1) * block].iter().all(|&v| v == 0.0))
    }

    pub fn is_symmetric(&self) -> bool {
        let perms = permutations(self.k);
        self.tuples.iter().all(|t| {
            level_vectors(self.k, self.levels).all(|lv| {
                let v = self.h(t, &lv);
                perms.iter().all(|p| {
                    let pt: Vec<u32> = p.iter().map(|&j| t[j]).collect();
                    let pl: Vec<usize> = p.iter().map(|&j| lv[j]).collect();
                    self.h(&pt, &pl) == v
                })
            })
        })
    }

    pub fn kind(&self) -> FamilyKind {
        if self.is_tetrahedral() {
            FamilyKind::Tetrahedral
        } else if self.is_symmetric() {
            FamilyKind::Symmetric
        } else {
            FamilyKind::General
        }
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    use itertools::Itertools;
    (0..k).permutations(k).collect()
}

/// The constant `c_k` printed for the identity: 1 for tetrahedral tables and
/// `k!` for symmetric ones.
pub fn stated_constant(kind: FamilyKind, k: usize) -> Option<f64> {
    match kind {
        FamilyKind::Tetrahedral => Some(1.0),
        FamilyKind::Symmetric => Some(factorial(k)),
        FamilyKind::General => None,
    }
}

/// Joint states of `vars` independent copies of the base law, each state a
/// `(sign, level)` pair, visited with their probabilities.
fn enumerate_states(base: &BaseLaw, vars: usize, mut visit: impl FnMut(&[(f64, usize)], f64)) -> Result<()> {
    let per = 2 * base.levels();
    let total = (per as u64).checked_pow(vars as u32).unwrap_or(u64::MAX);
    if total > MAX_ENUMERATION_STATES {
        return Err(Error::Guard {
            what: "enumeration states",
            value: total as usize,
            limit: MAX_ENUMERATION_STATES as usize,
        });
    }
    let mut state = vec![(1.0, 0usize); vars];
    for code in 0..total {
        let mut c = code;
        let mut prob = 1.0;
        for s in state.iter_mut() {
            let digit = (c % per as u64) as usize;
            c /= per as u64;
            let level = digit / 2;
            *s = (if digit.is_multiple_of(2) { 1.0 } else { -1.0 }, level);
            prob *= 0.5 * base.probs[level];
        }
        visit(&state, prob);
    }
    Ok(())
}

fn check_tables(tables: &[FTable], base: &BaseLaw) -> Result<usize> {
    let first = tables.first().ok_or(Error::Empty)?;
    for t in tables {
        if t.coords != first.coords {
            return Err(Error::DimensionMismatch(format!(
                "tables on [1,{}] and [1,{}]",
                first.coords, t.coords
            )));
        }
        if t.levels != base.levels() {
            return Err(Error::LengthMismatch {
                expected: base.levels(),
                got: t.levels,
            });
        }
    }
    Ok(first.coords)
}

/// `(E|Σ_k F_k((εX)^{⊗k})|², E|Σ_k c_k F_k((𝕊𝕏)^{⊗k})|²)`, both by full
/// enumeration of the base law. The coupled side has one variable per
/// coordinate; the decoupled side one per (row, coordinate) with `max k` rows.
pub fn nonmultiplicative_l2_sides(tables: &[FTable], constants: &[f64], base: &BaseLaw) -> Result<(f64, f64)> {
    let coords = check_tables(tables, base)?;
    if constants.len() != tables.len() {
        return Err(Error::LengthMismatch {
            expected: tables.len(),
            got: constants.len(),
        });
    }
    let rows = tables.iter().map(FTable::degree).max().unwrap_or(0);

    let mut coupled = NeumaierSum::default();
    let mut lv = Vec::new();
    enumerate_states(base, coords, |state, prob| {
        let mut q = NeumaierSum::default();
        for t in tables {
            for tuple in &t.tuples {
                lv.clear();
                let mut sign = 1.0;
                for &i in tuple {
                    let (s, l) = state[i as usize - 1];
                    sign *= s;
                    lv.push(l);
                }
                q.add(sign * t.h(tuple, &lv));
            }
        }
        let q = q.total();
        coupled.add(prob * q * q);
    })?;

    let mut decoupled = NeumaierSum::default();
    enumerate_states(base, rows * coords, |state, prob| {
        let mut q = NeumaierSum::default();
        for (t, &c) in tables.iter().zip(constants) {
            for tuple in &t.tuples {
                lv.clear();
                let mut sign = 1.0;
                for (row, &i) in tuple.iter().enumerate() {
                    let (s, l) = state[row * coords + i as usize - 1];
                    sign *= s;
                    lv.push(l);
                }
                q.add(c * sign * t.h(tuple, &lv));
            }
        }
        let q = q.total();
        decoupled.add(prob * q * q);
    })?;
    Ok((coupled.total(), decoupled.total()))
}

/// Equality check of the non-multiplicative second-moment identity to
/// `1e-10` relative. Constants default to [`stated_constant`] per table.
pub fn probe_nonmultiplicative_l2(tables: &[FTable], base: &BaseLaw, constants: Option<&[f64]>) -> Result<ProbeReport> {
    let constants: Vec<f64> = match constants {
        Some(c) => c.to_vec(),
        None => tables
            .iter()
            .map(|t| {
                stated_constant(t.kind(), t.degree()).ok_or_else(|| {
                    Error::InvalidParameter("tables must be tetrahedral or symmetric to pick a constant".into())
                })
            })
            .collect::<Result<_>>()?,
    };
    let (lhs, rhs) = nonmultiplicative_l2_sides(tables, &constants, base)?;
    let equal = (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0);
    let verdict = if equal { Verdict::Consistent } else { Verdict::Violated };
    let mut report = ProbeReport::exact(
        "nonmultiplicative-l2",
        "nonmultiplicative-second-moment-identity",
        Estimate::exact(lhs),
        Estimate::exact(rhs),
        verdict,
        Expectation::Holds,
    )
    .param("constants", constants.clone())
    .param("degrees", tables.iter().map(FTable::degree).collect::<Vec<_>>());
    if tables.len() == 1 {
        let (_, unit) = nonmultiplicative_l2_sides(tables, &[1.0], base)?;
        if unit > 0.0 {
            report = report.param("equality_constant", (lhs / unit).sqrt());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_table_is_an_identity() {
        let t = FTable::new(1, 3, 2, |i, l| i[0] as f64 * (1.0 + l[0] as f64)).unwrap();
        let (a, b) = nonmultiplicative_l2_sides(&[t], &[1.0], &BaseLaw::two_level()).unwrap();
        assert!((a - b).abs() < 1e-12);
        // Σ_i i² E[(1 + level)²] = 14 · 2.5.
        assert!((a - 35.0).abs() < 1e-12);
    }

    #[test]
    fn multiplicative_tetrahedral_needs_no_constant() {
        let base = BaseLaw::two_level();
        let m = base.magnitudes().to_vec();
        let t = FTable::new(2, 3, 2, |i, l| if i[0] < i[1] { m[l[0]] * m[l[1]] } else { 0.0 }).unwrap();
        assert_eq!(t.kind(), FamilyKind::Tetrahedral);
        let r = probe_nonmultiplicative_l2(&[t], &base, None).unwrap();
        assert_eq!(r.verdict, Verdict::Consistent);
    }

    #[test]
    fn symmetric_equality_constant_is_root_factorial() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let base = BaseLaw::two_level();
        for k in [2, 3] {
            let t = FTable::random(k, 3, 2, FamilyKind::Symmetric, &mut rng).unwrap();
            assert_eq!(t.kind(), FamilyKind::Symmetric);
            let r = probe_nonmultiplicative_l2(&[t], &base, None).unwrap();
            let c = r.parameters["equality_constant"].as_f64().unwrap();
            assert!((c - factorial(k).sqrt()).abs() < 1e-10, "k={k}: {c}");
        }
    }

    #[test]
    fn guard_stops_large_enumerations() {
        let t = FTable::new(3, 8, 2, |_, _| 1.0).unwrap();
        assert!(matches!(
            nonmultiplicative_l2_sides(&[t], &[1.0], &BaseLaw::two_level()),
            Err(Error::Guard { .. })
        ));
    }
}
