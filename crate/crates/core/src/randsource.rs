//! Symmetric laws, seeded substreams, coupled and decoupled sample matrices,
//! Walsh characters and sign randomization.

use std::f64::consts::{E, FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::{MultiIndex, MAX_COORD, MAX_SLOTS};

/// The RNG used for every stream in the crate.
pub type StreamRng = ChaCha8Rng;

/// Counter-style key of an independent random stream.
///
/// Two keys that differ in any field give unrelated streams, so rows and
/// replicates can be generated in any order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct StreamKey {
    pub master: u64,
    pub domain: u64,
    pub replicate: u64,
    pub row: u64,
}

impl StreamKey {
    pub fn new(master: u64, domain: u64) -> Self {
        Self {
            master,
            domain,
            replicate: 0,
            row: 0,
        }
    }

    pub fn replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    pub fn row(self, row: u64) -> Self {
        Self { row, ..self }
    }

    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        for (chunk, word) in seed
            .chunks_exact_mut(8)
            .zip([self.master, self.domain, self.replicate, self.row])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// A symmetric real law.
#[derive(Clone, PartialEq, Debug)]
pub enum DistributionSpec {
    Rademacher,
    /// Mean 0, variance 1.
    Gaussian,
    /// Characteristic function `exp(-|t|^α)`, `α ∈ (0, 2]`.
    StableSas(f64),
    /// `P(|Y| > t) = t^{-α}` for `t ≥ 1`, `α ∈ (0, 2)`.
    ParetoSap(f64),
    /// Random sign times a unit-intensity `Gamma(m, 1)` variable.
    SymmetrizedGamma(u32),
    /// `P(|θ| > t) = 1/(t ln² t)` for `t ≥ e`; `|θ| = e` with probability `1 - 1/e`.
    LogSquaredTail,
    ProductOf(Box<DistributionSpec>, Box<DistributionSpec>),
    SumOf(Box<DistributionSpec>, Box<DistributionSpec>),
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::StableSas(a) if !(*a > 0.0 && *a <= 2.0) => {
                Err(Error::InvalidParameter(format!("stable index {a} outside (0, 2]")))
            }
            Self::ParetoSap(a) if !(*a > 0.0 && *a < 2.0) => {
                Err(Error::InvalidParameter(format!("Pareto index {a} outside (0, 2)")))
            }
            Self::SymmetrizedGamma(0) => Err(Error::InvalidParameter("gamma shape must be positive".into())),
            Self::ProductOf(a, b) | Self::SumOf(a, b) => {
                a.validate()?;
                b.validate()
            }
            _ => Ok(()),
        }
    }

    /// `E|X| < ∞`.
    pub fn is_integrable(&self) -> bool {
        match self {
            Self::StableSas(a) | Self::ParetoSap(a) => *a > 1.0,
            Self::ProductOf(a, b) | Self::SumOf(a, b) => a.is_integrable() && b.is_integrable(),
            _ => true,
        }
    }

    /// Laws whose values are `±1` only.
    pub fn is_rademacher(&self) -> bool {
        matches!(self, Self::Rademacher)
    }

    /// One draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Rademacher => random_sign(rng),
            Self::Gaussian => rng.sample(StandardNormal),
            Self::StableSas(a) => sample_stable(*a, rng),
            Self::ParetoSap(a) => random_sign(rng) * open_unit(rng).powf(-1.0 / a),
            Self::SymmetrizedGamma(m) => {
                let g: f64 = (0..*m).map(|_| -> f64 { Exp1.sample(rng) }).sum();
                random_sign(rng) * g
            }
            Self::LogSquaredTail => sample_log_squared(rng),
            Self::ProductOf(a, b) => a.sample(rng) * b.sample(rng),
            Self::SumOf(a, b) => a.sample(rng) + b.sample(rng),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rademacher => write!(f, "rademacher"),
            Self::Gaussian => write!(f, "gaussian"),
            Self::StableSas(a) => write!(f, "sas:{a}"),
            Self::ParetoSap(a) => write!(f, "sap:{a}"),
            Self::SymmetrizedGamma(m) => write!(f, "symgamma:{m}"),
            Self::LogSquaredTail => write!(f, "logsq"),
            Self::ProductOf(a, b) => write!(f, "prod({a},{b})"),
            Self::SumOf(a, b) => write!(f, "sum({a},{b})"),
        }
    }
}

impl FromStr for DistributionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = parse_spec(s.trim())?;
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_spec(s: &str) -> Result<DistributionSpec> {
    let bad = || Error::Parse(format!("unknown distribution {s:?}"));
    for (prefix, is_product) in [("prod(", true), ("sum(", false)] {
        if let Some(inner) = s.strip_prefix(prefix) {
            let inner = inner.strip_suffix(')').ok_or_else(bad)?;
            let split = top_level_comma(inner).ok_or_else(bad)?;
            let a = Box::new(parse_spec(inner[..split].trim())?);
            let b = Box::new(parse_spec(inner[split + 1..].trim())?);
            return Ok(if is_product {
                DistributionSpec::ProductOf(a, b)
            } else {
                DistributionSpec::SumOf(a, b)
            });
        }
    }
    let (name, arg) = match s.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (s, None),
    };
    let real = |a: Option<&str>| -> Result<f64> {
        a.ok_or_else(bad)?
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad numeric parameter in {s:?}")))
    };
    match (name, arg) {
        ("rademacher", None) => Ok(DistributionSpec::Rademacher),
        ("gaussian", None) => Ok(DistributionSpec::Gaussian),
        ("logsq", None) => Ok(DistributionSpec::LogSquaredTail),
        ("sas", a) => Ok(DistributionSpec::StableSas(real(a)?)),
        ("sap", a) => Ok(DistributionSpec::ParetoSap(real(a)?)),
        ("symgamma", Some(a)) => a
            .trim()
            .parse::<u32>()
            .map(DistributionSpec::SymmetrizedGamma)
            .map_err(|_| Error::Parse(format!("bad gamma shape in {s:?}"))),
        _ => Err(bad()),
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

/// `±1` with equal probability.
pub fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.next_u32() & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Uniform on `(0, 1]`.
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Chambers–Mallows–Stuck transform for the symmetric case.
fn sample_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if alpha == 1.0 {
        return v.tan();
    }
    if alpha == 2.0 {
        return 2.0 * v.sin() * w.sqrt();
    }
    // v = -π/2 has probability 2^-53; nudge it inside.
    let v = v.max(-FRAC_PI_2 + 1e-300);
    let a = (alpha * v).sin() / v.cos().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Inverse of the tail `u = 1/(t ln² t)` on `t ≥ e`, returning `ln t`.
pub fn log_squared_tail_inverse_log(u: f64) -> f64 {
    log_squared_root(-u.ln())
}

/// Root `s ≥ 1` of `s + 2 ln s = l`, by two Halley steps. The start is the
/// quadratic Taylor polynomial at `l = 1` below `l = 6` and the asymptotic
/// `l − 2 ln l + 4 ln l / l` above; both leave the result within a few ulps.
fn log_squared_root(l: f64) -> f64 {
    if l <= 1.0 {
        return 1.0;
    }
    let mut s = if l < 6.0 {
        let d = l - 1.0;
        1.0 + d / 3.0 + d * d / 27.0
    } else {
        let ll = l.ln();
        l - 2.0 * ll + 4.0 * ll / l
    };
    for _ in 0..2 {
        let g = s + 2.0 * s.ln() - l;
        let d1 = 1.0 + 2.0 / s;
        let d2 = -2.0 / (s * s);
        s = (s - 2.0 * g * d1 / (2.0 * d1 * d1 - g * d2)).max(1.0);
    }
    s
}

fn sample_log_squared<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64();
    let sign = if bits & 1 == 0 { 1.0 } else { -1.0 };
    // Uniform on (0, 1] from the remaining 53 bits.
    let u = ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    if u > 1.0 / E {
        sign * E
    } else {
        // Given u ≤ 1/e, -ln u - 1 is a unit exponential.
        let e: f64 = Exp1.sample(rng);
        sign * log_squared_root(1.0 + e).exp()
    }
}

/// `N` i.i.d. draws from `spec`.
pub fn sample_sequence<R: Rng + ?Sized>(spec: &DistributionSpec, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok((0..len).map(|_| spec.sample(rng)).collect())
}

/// Coupled: every row is the same sequence. Decoupled: rows are independent
/// copies.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Coupled,
    Decoupled,
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Coupled => write!(f, "coupled"),
            Self::Decoupled => write!(f, "decoupled"),
        }
    }
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled" => Ok(Self::Coupled),
            "decoupled" => Ok(Self::Decoupled),
            _ => Err(Error::Parse(format!("unknown sample mode {s:?}"))),
        }
    }
}

/// Where the entries of a sample matrix came from.
#[derive(Clone, PartialEq, Debug)]
pub enum Provenance {
    Seeded { spec: String, key: StreamKey },
    Explicit,
}

/// An `n × N` real matrix; row `k` (slot `k + 1`) holds the sequence fed to
/// slot `k + 1` of a chaos.
#[derive(Clone, PartialEq, Debug)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    mode: SampleMode,
    data: Vec<f64>,
    provenance: Provenance,
}

impl SampleMatrix {
    /// Builds a matrix from explicit rows. Coupled matrices must have
    /// identical rows.
    pub fn from_rows(mode: SampleMode, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        check_shape(n, cols)?;
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        if mode == SampleMode::Coupled && rows.iter().any(|r| r != &rows[0]) {
            return Err(Error::ModeMismatch("coupled matrix rows must be identical".into()));
        }
        Ok(Self {
            rows: n,
            cols,
            mode,
            data: rows.concat(),
            provenance: Provenance::Explicit,
        })
    }

    /// `n` copies of one sequence.
    pub fn coupled_from_sequence(n: usize, seq: &[f64]) -> Result<Self> {
        Self::from_rows(SampleMode::Coupled, vec![seq.to_vec(); n])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mode(&self) -> SampleMode {
        self.mode
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Row `r` (0-based).
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `X_{slot, coord}` with 1-based slot and coordinate.
    #[inline]
    pub fn at(&self, slot: usize, coord: u32) -> f64 {
        self.data[(slot - 1) * self.cols + coord as usize - 1]
    }
}

fn check_shape(n: usize, cols: usize) -> Result<()> {
    if n > MAX_SLOTS {
        return Err(Error::SlotLimit(n));
    }
    if cols > MAX_COORD {
        return Err(Error::Guard {
            what: "coordinate bound",
            value: cols,
            limit: MAX_COORD,
        });
    }
    Ok(())
}

/// Samples an `n × N` matrix. Row `r` of a decoupled matrix comes from the
/// substream `key.row(r)`; a coupled matrix repeats the row-0 substream.
pub fn sample_matrix(
    spec: &DistributionSpec,
    n: usize,
    cols: usize,
    mode: SampleMode,
    key: StreamKey,
) -> Result<SampleMatrix> {
    spec.validate()?;
    check_shape(n, cols)?;
    let mut data = Vec::with_capacity(n * cols);
    match mode {
        SampleMode::Coupled => {
            let row = sample_sequence(spec, cols, &mut key.row(0).rng())?;
            for _ in 0..n {
                data.extend_from_slice(&row);
            }
        }
        SampleMode::Decoupled => {
            for r in 0..n {
                data.extend(sample_sequence(spec, cols, &mut key.row(r as u64).rng())?);
            }
        }
    }
    Ok(SampleMatrix {
        rows: n,
        cols,
        mode,
        data,
        provenance: Provenance::Seeded {
            spec: spec.to_string(),
            key,
        },
    })
}

/// A Walsh argument `β ⊂ [1, n]`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct WalshAssignment(pub MultiIndex);

/// `w_α(β) = (-1)^{|α ∩ β|}`.
pub fn walsh(alpha: MultiIndex, beta: WalshAssignment) -> Result<i8> {
    if alpha.n() != beta.0.n() {
        return Err(Error::DimensionMismatch(format!(
            "Walsh character on [1,{}] evaluated at a subset of [1,{}]",
            alpha.n(),
            beta.0.n()
        )));
    }
    Ok(if (alpha.bits() & beta.0.bits()).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    })
}

/// Multiplies entries by independent signs. A coupled matrix gets one sign
/// per column shared by all rows (`εX`); a decoupled matrix gets one sign
/// per entry (`SX`). Either way the mode invariant is preserved.
pub fn randomize_signs<R: Rng + ?Sized>(matrix: &SampleMatrix, rng: &mut R) -> SampleMatrix {
    let mut out = matrix.clone();
    match matrix.mode {
        SampleMode::Coupled => {
            let signs: Vec<f64> = (0..matrix.cols).map(|_| random_sign(rng)).collect();
            for r in 0..matrix.rows {
                for (c, s) in signs.iter().enumerate() {
                    out.data[r * matrix.cols + c] *= s;
                }
            }
        }
        SampleMode::Decoupled => {
            for x in out.data.iter_mut() {
                *x *= random_sign(rng);
            }
        }
    }
    out
}

/// Empirical characteristic function `(1/M) Σ cos(t x_m)` at each grid point.
pub fn ecf(samples: &[f64], t_grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let m = samples.len() as f64;
    Ok(t_grid
        .iter()
        .map(|&t| crate::numeric::compensated_sum(samples.iter().map(|&x| (t * x).cos())) / m)
        .collect())
}
