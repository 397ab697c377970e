use std::path::{Path, PathBuf};

use decoupling_core::banach::{NormTarget, PhiFunctional};
use decoupling_core::multiindex::CoefficientFamily;
use decoupling_core::randsource::{DistributionSpec, SampleMode};
use decoupling_core::verify::{Expectation, McConfig, VectorFamily};
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "DECOUPLING_LAB_SEED";
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_REPLICATES: usize = 20_000;

/// One probe run as written in a TOML file. Every field except `probe` is
/// optional; probes fall back to their own defaults.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub probe: String,
    pub spec: Option<String>,
    pub right_spec: Option<String>,
    pub target: Option<String>,
    /// `pow:P`, or a path to a JSON table `{"t": [..], "phi": [..], "a0": x}`.
    pub phi: Option<String>,
    /// Inline family JSON.
    pub family: Option<String>,
    pub family_file: Option<PathBuf>,
    pub mode: Option<String>,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub batch: Option<usize>,
    pub confidence: Option<f64>,
    pub out: Option<PathBuf>,
    /// `holds` or `fails`; only the divergence probe reads it.
    pub expect: Option<String>,
    /// `lower-h:C` or `exp:D`.
    pub multipliers: Option<String>,
    pub max_j: Option<u32>,
    pub g: Option<f64>,
    pub c: Option<f64>,
    pub u_grid: Option<Vec<f64>>,
    pub n_grid: Option<Vec<usize>>,
    pub t_grid: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub s: Option<f64>,
    pub vectors: Option<VectorsConfig>,
    pub degree: Option<usize>,
    pub coords: Option<usize>,
    /// `tetrahedral`, `symmetric` or `general`.
    pub kind: Option<String>,
    pub tables: Option<usize>,
    pub constant: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VectorsConfig {
    pub x: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A config with overrides applied and shared fields parsed.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub raw: ExperimentConfig,
    /// Directory relative paths in the file resolve against.
    pub base: PathBuf,
    pub mc: McConfig,
    pub out: Option<PathBuf>,
}

/// Reads `DECOUPLING_LAB_SEED`; an unparsable value is a config error rather
/// than silently ignored.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let raw = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::resolve(raw, base, overrides, env_seed()?)
    }

    /// Precedence for the seed is flag, file, environment, default.
    pub fn resolve(raw: ExperimentConfig, base: PathBuf, overrides: &Overrides, env_seed: Option<u64>) -> Result<Self> {
        let seed = overrides.seed.or(raw.seed).or(env_seed).unwrap_or(DEFAULT_SEED);
        let mut mc = McConfig::new(overrides.replicates.or(raw.replicates).unwrap_or(DEFAULT_REPLICATES), seed);
        if let Some(b) = raw.batch {
            mc.batch = b;
        }
        if let Some(c) = raw.confidence {
            mc.confidence = c;
        }
        mc.validate()?;
        let out = overrides.out.clone().or_else(|| raw.out.as_ref().map(|p| base.join(p)));
        Ok(Self { raw, base, mc, out })
    }

    pub fn spec_or(&self, default: DistributionSpec) -> Result<DistributionSpec> {
        Ok(match &self.raw.spec {
            Some(s) => s.parse()?,
            None => default,
        })
    }

    pub fn right_spec(&self) -> Result<DistributionSpec> {
        match &self.raw.right_spec {
            Some(s) => Ok(s.parse()?),
            None => Err(CliError::Config("this probe needs right_spec".into())),
        }
    }

    pub fn target_or(&self, dim: usize) -> Result<NormTarget> {
        Ok(match &self.raw.target {
            Some(t) => t.parse()?,
            None => NormTarget::lp(dim, 2.0)?,
        })
    }

    pub fn phi_or(&self, default: f64) -> Result<PhiFunctional> {
        let Some(text) = &self.raw.phi else {
            return Ok(PhiFunctional::power(default)?);
        };
        if text.trim().starts_with("pow:") {
            return Ok(text.parse()?);
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Table {
            t: Vec<f64>,
            phi: Vec<f64>,
            a0: f64,
        }
        let path = self.base.join(text);
        let body = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let table: Table =
            serde_json::from_str(&body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(PhiFunctional::table(table.t, table.phi, table.a0)?)
    }

    pub fn mode_or(&self, default: SampleMode) -> Result<SampleMode> {
        Ok(match &self.raw.mode {
            Some(m) => m.parse()?,
            None => default,
        })
    }

    pub fn expectation_or(&self, default: Expectation) -> Result<Expectation> {
        match self.raw.expect.as_deref() {
            None => Ok(default),
            Some("holds") => Ok(Expectation::Holds),
            Some("fails") => Ok(Expectation::Fails),
            Some(other) => Err(CliError::Config(format!("expect must be holds or fails, got {other:?}"))),
        }
    }

    pub fn family(&self) -> Result<CoefficientFamily> {
        match (&self.raw.family, &self.raw.family_file) {
            (Some(_), Some(_)) => Err(CliError::Config("give family or family_file, not both".into())),
            (Some(text), None) => Ok(CoefficientFamily::from_json(text)?),
            (None, Some(file)) => {
                let path = self.base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                Ok(CoefficientFamily::from_json(&text)?)
            }
            (None, None) => Ok(demo_family()?),
        }
    }

    pub fn vectors_or(&self, dim: usize, count: usize) -> Result<VectorFamily> {
        Ok(match &self.raw.vectors {
            Some(v) => VectorFamily::new(v.x.clone(), v.xs.clone())?,
            None => VectorFamily::random(dim, count, decoupling_core::randsource::StreamKey::new(self.mc.seed, 0))?,
        })
    }
}

/// Degree-two symmetric family in `R^3` with `N = 4` and terms of every
/// degree, used when a config names no family.
pub fn demo_family() -> decoupling_core::Result<CoefficientFamily> {
    use decoupling_core::multiindex::MultiIndex;
    let mut f = CoefficientFamily::new(2, 4, 3)?;
    f.set_empty_term(vec![0.5, 0.0, -0.25])?;
    for slot in 1..=2 {
        let alpha = MultiIndex::from_slots(2, &[slot])?;
        for i in 1..=4u32 {
            let x = i as f64;
            f.insert(alpha, vec![i], vec![0.3 * x, -0.1, 0.2 / x])?;
        }
    }
    let full = MultiIndex::full(2)?;
    for i in 1..=4u32 {
        for j in 1..=4u32 {
            if i != j {
                let (a, b) = (i as f64, j as f64);
                f.insert(full, vec![i, j], vec![1.0 / (a + b), 0.1 * a * b, (a - b).abs() / 4.0])?;
            }
        }
    }
    Ok(f)
}
