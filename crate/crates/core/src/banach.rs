//! Finite-dimensional norm targets, Young-type functionals `φ` and the
//! closed-form constants used by the probes.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `ℓ^p_d` or a direct sum `left ⊕_s right`.
#[derive(Clone, PartialEq, Debug)]
pub enum NormTarget {
    /// `p = f64::INFINITY` is the max norm.
    Lp { d: usize, p: f64 },
    DirectSum {
        left: Box<NormTarget>,
        right: Box<NormTarget>,
        s: f64,
    },
}

impl NormTarget {
    pub fn lp(d: usize, p: f64) -> Result<Self> {
        let t = Self::Lp { d, p };
        t.validate()?;
        Ok(t)
    }

    pub fn direct_sum(left: NormTarget, right: NormTarget, s: f64) -> Result<Self> {
        let t = Self::DirectSum {
            left: Box::new(left),
            right: Box::new(right),
            s,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Lp { d, p } => {
                if *d == 0 {
                    return Err(Error::InvalidParameter("dimension must be positive".into()));
                }
                if !(*p >= 1.0) {
                    return Err(Error::InvalidParameter(format!("exponent {p} below 1")));
                }
                Ok(())
            }
            Self::DirectSum { left, right, s } => {
                if !(*s >= 1.0) {
                    return Err(Error::InvalidParameter(format!("direct-sum exponent {s} below 1")));
                }
                left.validate()?;
                right.validate()
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Lp { d, .. } => *d,
            Self::DirectSum { left, right, .. } => left.dim() + right.dim(),
        }
    }

    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.norm_unchecked(x))
    }

    fn norm_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Self::Lp { p, .. } => lp_norm(x, *p),
            Self::DirectSum { left, right, s } => {
                let (a, b) = x.split_at(left.dim());
                lp_norm(&[left.norm_unchecked(a), right.norm_unchecked(b)], *s)
            }
        }
    }
}

fn lp_norm(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    // Scale by the max entry to avoid overflow in |x|^p.
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p == 2.0 {
        return m * x.iter().map(|v| (v / m).powi(2)).sum::<f64>().sqrt();
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

impl fmt::Display for NormTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lp { d, p } if p.is_infinite() => write!(f, "linf:{d}"),
            Self::Lp { d, p } if *p == 1.0 => write!(f, "l1:{d}"),
            Self::Lp { d, p } => write!(f, "lp:{p}:{d}"),
            Self::DirectSum { left, right, s } => write!(f, "dsum({left}, {right}; s={s})"),
        }
    }
}

impl FromStr for NormTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("unknown norm target {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let dim = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        if let Some(inner) = s.strip_prefix("dsum(") {
            let inner = inner.strip_suffix(')').ok_or_else(bad)?;
            let (parts, exp) = inner.rsplit_once(';').ok_or_else(bad)?;
            let exp = exp.trim().strip_prefix("s=").ok_or_else(bad)?;
            let split = top_level_comma(parts).ok_or_else(bad)?;
            let left: NormTarget = parts[..split].parse()?;
            let right: NormTarget = parts[split + 1..].parse()?;
            let s = if exp.trim() == "inf" { f64::INFINITY } else { num(exp)? };
            return NormTarget::direct_sum(left, right, s);
        }
        let fields: Vec<&str> = s.split(':').collect();
        match fields.as_slice() {
            ["lp", p, d] => {
                let p = if p.trim() == "inf" { f64::INFINITY } else { num(p)? };
                NormTarget::lp(dim(d)?, p)
            }
            ["linf", d] => NormTarget::lp(dim(d)?, f64::INFINITY),
            ["l1", d] => NormTarget::lp(dim(d)?, 1.0),
            ["l2", d] => NormTarget::lp(dim(d)?, 2.0),
            _ => Err(bad()),
        }
    }
}

fn top_level_comma(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

/// A nondecreasing `φ` with `φ(0) = 0`.
#[derive(Clone, PartialEq, Debug)]
pub enum PhiFunctional {
    /// `t^p`; `φ^a` is convex exactly for `a ≥ 1/p`.
    Power(f64),
    /// Values on an increasing positive grid, interpolated linearly in
    /// `(ln t, ln φ)` and extended by the end slopes.
    OrliczTable {
        t: Vec<f64>,
        phi: Vec<f64>,
        a0: f64,
    },
}

impl PhiFunctional {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("power {p} must be positive")));
        }
        Ok(Self::Power(p))
    }

    /// Builds a table; the grid must be strictly increasing, positive, with
    /// strictly positive nondecreasing values.
    pub fn table(t: Vec<f64>, phi: Vec<f64>, a0: f64) -> Result<Self> {
        if t.len() != phi.len() {
            return Err(Error::LengthMismatch {
                expected: t.len(),
                got: phi.len(),
            });
        }
        if t.len() < 2 {
            return Err(Error::InvalidParameter("table needs at least two points".into()));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) || t[0] <= 0.0 {
            return Err(Error::InvalidParameter("grid must be positive and strictly increasing".into()));
        }
        if phi.windows(2).any(|w| w[0] > w[1]) || phi[0] <= 0.0 {
            return Err(Error::InvalidParameter("table values must be positive and nondecreasing".into()));
        }
        if !(a0 > 0.0) {
            return Err(Error::InvalidParameter(format!("convexity exponent {a0} must be positive")));
        }
        Ok(Self::OrliczTable { t, phi, a0 })
    }

    /// Samples `φ` on `points` log-spaced grid values in `[lo, hi]`.
    pub fn tabulate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, a0: f64) -> Result<Self> {
        if points < 2 || !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParameter("bad tabulation range".into()));
        }
        let step = (hi / lo).ln() / (points - 1) as f64;
        let t: Vec<f64> = (0..points).map(|j| lo * (step * j as f64).exp()).collect();
        let phi = t.iter().map(|&x| f(x)).collect();
        Self::table(t, phi, a0)
    }

    /// The declared (or exact, for powers) convexity threshold `a₀`.
    pub fn a0(&self) -> f64 {
        match self {
            Self::Power(p) => 1.0 / p,
            Self::OrliczTable { a0, .. } => *a0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Self::Power(p) if *p == 2.0 => x * x,
            Self::Power(p) if *p == 1.0 => x,
            Self::Power(p) => x.powf(*p),
            Self::OrliczTable { t, phi, .. } => {
                if x == 0.0 {
                    return 0.0;
                }
                let lx = x.ln();
                let j = match t.partition_point(|&g| g <= x) {
                    0 => 0,
                    k if k >= t.len() => t.len() - 2,
                    k => k - 1,
                };
                let (l0, l1) = (t[j].ln(), t[j + 1].ln());
                let (p0, p1) = (phi[j].ln(), phi[j + 1].ln());
                let w = (lx - l0) / (l1 - l0);
                (p0 + w * (p1 - p0)).exp()
            }
        }
    }

    /// Checks that `φ^a` is midpoint convex on the grid (tables) for the
    /// given `a`.
    pub fn is_power_convex_on_grid(&self, a: f64) -> bool {
        let pts: Vec<f64> = match self {
            Self::Power(_) => (1..200).map(|j| j as f64 * 0.05).collect(),
            Self::OrliczTable { t, .. } => t.clone(),
        };
        pts.windows(3).all(|w| {
            let g = |x: f64| self.eval(x).powf(a);
            // Secant slopes must be nondecreasing.
            let s1 = (g(w[1]) - g(w[0])) / (w[1] - w[0]);
            let s2 = (g(w[2]) - g(w[1])) / (w[2] - w[1]);
            s2 >= s1 - 1e-9 * s1.abs().max(1.0)
        })
    }
}

impl fmt::Display for PhiFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power(p) => write!(f, "pow:{p}"),
            Self::OrliczTable { t, a0, .. } => write!(f, "table[{} points, a0={a0}]", t.len()),
        }
    }
}

impl FromStr for PhiFunctional {
    type Err = Error;

    /// Parses `pow:P`; tables are loaded by the caller.
    fn from_str(s: &str) -> Result<Self> {
        let p = s
            .trim()
            .strip_prefix("pow:")
            .ok_or_else(|| Error::Parse(format!("unknown functional {s:?}")))?;
        let p: f64 = p.trim().parse().map_err(|_| Error::Parse(format!("bad power in {s:?}")))?;
        PhiFunctional::power(p)
    }
}

/// `c_{p,q} = ((p-1)/(q-1))^{1/2}` for `1 < q ≤ p < ∞`.
pub fn hyper_constant(p: f64, q: f64) -> Result<f64> {
    if !(q > 1.0 && q <= p && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 1 < q ≤ p < ∞, got p={p}, q={q}")));
    }
    Ok(((p - 1.0) / (q - 1.0)).sqrt())
}

/// `c_φ = (1 - a₀)^{-1/a₀}`.
pub fn strong_convexity_constant(phi: &PhiFunctional) -> Result<f64> {
    let a0 = phi.a0();
    if a0 >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "convexity exponent a0 = {a0} ≥ 1 gives an infinite constant"
        )));
    }
    Ok((1.0 - a0).powf(-1.0 / a0))
}

/// `h_k = (2ck)^k / k!`, with `h_0 = 1`.
pub fn lower_multiplier(k: usize, c: f64) -> f64 {
    (1..=k).map(|j| 2.0 * c * k as f64 / j as f64).product()
}

/// Coordinatewise `(Σ_i |x_i|^p)^{1/p}`.
pub fn lattice_pmoment(vectors: &[Vec<f64>], p: f64) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::Empty)?;
    let d = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::LengthMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {p} below 1")));
    }
    Ok((0..d)
        .map(|j| {
            let column: Vec<f64> = vectors.iter().map(|v| v[j]).collect();
            lp_norm(&column, p)
        })
        .collect())
}

/// The `λ` solving `(1/M) Σ φ(v_m / λ) = 1`, by bisection to relative `1e-9`.
pub fn luxemburg_norm(sample: &[f64], phi: &PhiFunctional) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty);
    }
    if sample.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let m = sample.len() as f64;
    let modular = |lambda: f64| sample.iter().map(|&v| phi.eval(v / lambda)).sum::<f64>() / m;
    let scale = sample.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (mut lo, mut hi) = (scale, scale);
    while modular(lo) < 1.0 {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Err(Error::InvalidParameter("modular never reaches 1".into()));
        }
    }
    while modular(hi) > 1.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InvalidParameter("modular unbounded".into()));
        }
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if modular(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Both sides of the two-point hypercontraction inequality at `(x, t) = (1, t)`:
/// `(((|1+ct|^q + |1-ct|^q)/2)^{1/q}, ((|1+t|^p + |1-t|^p)/2)^{1/p})`.
pub fn two_point_hypercontraction(p: f64, q: f64, c: f64, t: f64) -> (f64, f64) {
    let lhs = ((((1.0 + c * t).abs()).powf(q) + ((1.0 - c * t).abs()).powf(q)) / 2.0).powf(1.0 / q);
    let rhs = ((((1.0 + t).abs()).powf(p) + ((1.0 - t).abs()).powf(p)) / 2.0).powf(1.0 / p);
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn norm_examples() {
        let linf: NormTarget = "linf:2".parse().unwrap();
        assert_eq!(linf.norm(&[1.0, 0.5]).unwrap(), 1.0);
        let l2: NormTarget = "lp:2:3".parse().unwrap();
        assert_eq!(l2.norm(&[1.0, 2.0, 2.0]).unwrap(), 3.0);
        let ds = NormTarget::direct_sum(NormTarget::lp(2, 1.0).unwrap(), NormTarget::lp(2, 2.0).unwrap(), 1.0).unwrap();
        assert_eq!(ds.norm(&[1.0, 1.0, 3.0, 4.0]).unwrap(), 7.0);
        assert!(l2.norm(&[1.0]).is_err());
    }

    #[test]
    fn target_text_forms() {
        for s in ["lp:2:8", "linf:2", "l1:2", "dsum(lp:1:2, lp:3:2; s=1.5)"] {
            let t: NormTarget = s.parse().unwrap();
            let back: NormTarget = t.to_string().parse().unwrap();
            assert_eq!(t, back);
        }
        let t: NormTarget = "dsum(lp:1:2, lp:3:2; s=1.5)".parse().unwrap();
        assert_eq!(t.dim(), 4);
        assert!("lp:0.5:2".parse::<NormTarget>().is_err());
        assert!("lq:2:2".parse::<NormTarget>().is_err());
    }

    #[test]
    fn direct_sum_of_l1_is_l1() {
        let ds = NormTarget::direct_sum(NormTarget::lp(2, 1.0).unwrap(), NormTarget::lp(3, 1.0).unwrap(), 1.0).unwrap();
        let flat = NormTarget::lp(5, 1.0).unwrap();
        let x = [0.25, -1.5, 3.0, 0.125, -2.0];
        assert_eq!(ds.norm(&x).unwrap(), flat.norm(&x).unwrap());
    }

    #[test]
    fn hyper_constants() {
        assert_eq!(hyper_constant(3.0, 3.0).unwrap(), 1.0);
        assert!((hyper_constant(4.0, 2.0).unwrap() - 1.7320508).abs() < 1e-7);
        assert!((hyper_constant(3.0, 2.0).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(hyper_constant(2.0, 3.0).is_err());
        assert!(hyper_constant(2.0, 1.0).is_err());
    }

    #[test]
    fn convexity_constants() {
        assert_eq!(strong_convexity_constant(&PhiFunctional::Power(2.0)).unwrap(), 4.0);
        let p: f64 = 3.0;
        let want = (1.0 - 1.0 / p).powf(-p);
        assert!((strong_convexity_constant(&PhiFunctional::Power(p)).unwrap() - want).abs() < 1e-12);
        assert!(strong_convexity_constant(&PhiFunctional::Power(1.0)).is_err());
    }

    #[test]
    fn lower_multipliers() {
        assert_eq!(lower_multiplier(0, 4.0), 1.0);
        assert_eq!(lower_multiplier(1, 4.0), 8.0);
        assert_eq!(lower_multiplier(2, 4.0), 128.0);
    }

    #[test]
    fn pmoments() {
        assert_eq!(lattice_pmoment(&[vec![-1.0, 2.0]], 3.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(lattice_pmoment(&[vec![1.0, 2.0], vec![3.0, 0.5]], 1.0).unwrap(), vec![4.0, 2.5]);
        assert_eq!(lattice_pmoment(&[vec![3.0, 0.0], vec![4.0, 0.0]], 2.0).unwrap(), vec![5.0, 0.0]);
        assert!(lattice_pmoment(&[vec![1.0], vec![1.0, 2.0]], 2.0).is_err());
    }

    #[test]
    fn luxemburg_examples() {
        let p2 = PhiFunctional::Power(2.0);
        assert!((luxemburg_norm(&[1.0; 4], &p2).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(luxemburg_norm(&[0.0; 3], &p2).unwrap(), 0.0);
        assert!(luxemburg_norm(&[], &p2).is_err());

        let sample = [0.5, 1.5, 2.0, 0.25];
        let p3 = PhiFunctional::Power(3.0);
        let base = luxemburg_norm(&sample, &p3).unwrap();
        let lp = (sample.iter().map(|x: &f64| x.powi(3)).sum::<f64>() / 4.0).cbrt();
        assert!((base - lp).abs() < 1e-8 * lp);
        let scaled: Vec<f64> = sample.iter().map(|x| 7.0 * x).collect();
        assert!((luxemburg_norm(&scaled, &p3).unwrap() - 7.0 * base).abs() < 1e-8 * base * 7.0);

        let table = PhiFunctional::tabulate(|t| t * t, 1e-3, 1e3, 61, 0.5).unwrap();
        let a = luxemburg_norm(&sample, &table).unwrap();
        let b = luxemburg_norm(&sample, &p2).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn table_shape_checks() {
        let table = PhiFunctional::tabulate(|t| t * t, 1e-3, 1e3, 61, 0.5).unwrap();
        assert_eq!(table.eval(0.0), 0.0);
        assert!((table.eval(1e4) - 1e8).abs() < 1e-6 * 1e8);
        assert!(table.is_power_convex_on_grid(0.6));
        assert!(!table.is_power_convex_on_grid(0.4));
        assert!(PhiFunctional::table(vec![1.0, 0.5], vec![1.0, 2.0], 0.5).is_err());
        assert!(PhiFunctional::table(vec![1.0, 2.0], vec![2.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn two_point_hypercontraction_sharpness() {
        for (p, q) in [(4.0, 2.0), (3.0, 2.0)] {
            let c = hyper_constant(p, q).unwrap();
            for j in 1..=100 {
                let t = j as f64 / 100.0;
                let (l, r) = two_point_hypercontraction(p, q, c, t);
                assert!(l >= r - 1e-15, "p={p} t={t}");
            }
            let (l, r) = two_point_hypercontraction(p, q, 0.95 * c, 0.05);
            assert!(l < r);
        }
    }

    fn targets() -> impl Strategy<Value = NormTarget> {
        prop_oneof![
            Just("lp:2:4".parse().unwrap()),
            Just("l1:4".parse().unwrap()),
            Just("linf:4".parse().unwrap()),
            Just("lp:3.5:4".parse().unwrap()),
            Just("dsum(lp:1:2, lp:3:2; s=1.5)".parse().unwrap()),
            Just("dsum(linf:1, lp:2:3; s=inf)".parse().unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn norm_axioms(
            t in targets(),
            x in prop::collection::vec(-10.0f64..10.0, 4),
            y in prop::collection::vec(-10.0f64..10.0, 4),
            lambda in -5.0f64..5.0,
        ) {
            let nx = t.norm(&x).unwrap();
            let ny = t.norm(&y).unwrap();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            prop_assert!(t.norm(&sum).unwrap() <= nx + ny + 1e-12);
            let scaled: Vec<f64> = x.iter().map(|a| lambda * a).collect();
            prop_assert!((t.norm(&scaled).unwrap() - lambda.abs() * nx).abs() <= 1e-12 * (1.0 + nx * lambda.abs()));
            prop_assert!(nx >= 0.0);
        }
    }
}
