use decoupling_core::randsource::{DistributionSpec, SampleMode, StreamKey};
use decoupling_core::verify::{
    check_shyp_down, probe_contraction, probe_counterexample_linf2, probe_divergence_sup, probe_index_average_failure,
    probe_lower_decoupling, probe_lower_decoupling_scan, probe_nonmultiplicative_l2, probe_symmetrization,
    probe_tail_comparison, probe_upper_reduction, BaseLaw, Expectation, FTable, FactorizedMultiplier, FamilyKind,
    Multipliers, ProbeReport,
};

use crate::config::Experiment;
use crate::error::{CliError, Result};

pub struct ProbeEntry {
    pub name: &'static str,
    pub tag: &'static str,
    pub summary: &'static str,
    pub run: fn(&Experiment) -> Result<ProbeReport>,
}

pub const REGISTRY: &[ProbeEntry] = &[
    ProbeEntry {
        name: "lower-decoupling",
        tag: "sign-randomized-weak-lower-decoupling",
        summary: "decoupled chaos bounded by the sign-randomized coupled chaos",
        run: lower_decoupling,
    },
    ProbeEntry {
        name: "lower-decoupling-scan",
        tag: "lower-decoupling-exponential-constant",
        summary: "smallest 2^(j/4) multiplier that keeps the lower bound",
        run: lower_decoupling_scan,
    },
    ProbeEntry {
        name: "symmetrization-centering",
        tag: "centering-by-independent-copy",
        summary: "centering against an independent copy",
        run: symmetrization_centering,
    },
    ProbeEntry {
        name: "symmetrization-decoupled",
        tag: "decoupled-symmetrization-walsh",
        summary: "decoupled chaos against its Rademacher-signed version",
        run: symmetrization_decoupled,
    },
    ProbeEntry {
        name: "symmetrization-coupled",
        tag: "coupled-symmetrization-walsh",
        summary: "coupled chaos against its Rademacher-signed version",
        run: symmetrization_coupled,
    },
    ProbeEntry {
        name: "contraction",
        tag: "contraction-principle",
        summary: "product-form multipliers bounded by their supremum",
        run: contraction,
    },
    ProbeEntry {
        name: "tail-comparison",
        tag: "comparable-tails",
        summary: "tail probabilities of chaoses built on two comparable laws",
        run: tail_comparison,
    },
    ProbeEntry {
        name: "upper-reduction",
        tag: "upper-decoupling-reduction",
        summary: "single-vector upper decoupling constant scan",
        run: upper_reduction,
    },
    ProbeEntry {
        name: "counterexample-linf2",
        tag: "linf2-exponential-versus-gaussian",
        summary: "closed-form l-infinity counterexample ratio on a u grid",
        run: counterexample_linf2,
    },
    ProbeEntry {
        name: "shyp-down",
        tag: "stable-pareto-hypercontraction-lower",
        summary: "stable versus Pareto lower hypercontraction on a t grid",
        run: shyp_down,
    },
    ProbeEntry {
        name: "nonmultiplicative-l2",
        tag: "nonmultiplicative-second-moment-identity",
        summary: "exact second moments of non-multiplicative chaoses",
        run: nonmultiplicative_l2,
    },
    ProbeEntry {
        name: "divergence-sup",
        tag: "running-average-supremum-divergence",
        summary: "growth of the scaled running-sum supremum",
        run: divergence_sup,
    },
    ProbeEntry {
        name: "index-average-failure",
        tag: "index-average-upper-bound-failure",
        summary: "index-averaged chaos against the plain upper bound",
        run: index_average_failure,
    },
];

pub fn lookup(name: &str) -> Result<&'static ProbeEntry> {
    REGISTRY.iter().find(|e| e.name == name).ok_or_else(|| {
        let known: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
        CliError::Config(format!("unknown probe {name:?}; known probes: {}", known.join(", ")))
    })
}

fn parse_multipliers(text: &str) -> Result<Multipliers> {
    let bad = || CliError::Config(format!("multipliers must be lower-h:C or exp:D, got {text:?}"));
    let (kind, value) = text.split_once(':').ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    match kind.trim() {
        "lower-h" => Ok(Multipliers::LowerH { c: value }),
        "exp" => Ok(Multipliers::Exponential { d: value }),
        _ => Err(bad()),
    }
}

fn parse_kind(text: &str) -> Result<FamilyKind> {
    match text {
        "tetrahedral" => Ok(FamilyKind::Tetrahedral),
        "symmetric" => Ok(FamilyKind::Symmetric),
        "general" => Ok(FamilyKind::General),
        _ => Err(CliError::Config(format!("kind must be tetrahedral, symmetric or general, got {text:?}"))),
    }
}

fn lower_decoupling(e: &Experiment) -> Result<ProbeReport> {
    let f = e.family()?;
    let multipliers = e.raw.multipliers.as_deref().map(parse_multipliers).transpose()?;
    Ok(probe_lower_decoupling(
        &f,
        &e.spec_or(DistributionSpec::Gaussian)?,
        &e.phi_or(2.0)?,
        &e.target_or(f.dim())?,
        multipliers,
        &e.mc,
    )?)
}

fn lower_decoupling_scan(e: &Experiment) -> Result<ProbeReport> {
    let f = e.family()?;
    Ok(probe_lower_decoupling_scan(
        &f,
        &e.spec_or(DistributionSpec::Gaussian)?,
        &e.phi_or(2.0)?,
        &e.target_or(f.dim())?,
        e.raw.max_j.unwrap_or(16),
        &e.mc,
    )?)
}

fn symmetrization(e: &Experiment, which: usize) -> Result<ProbeReport> {
    let f = e.family()?;
    let [a, b, c] = probe_symmetrization(
        &f,
        &e.spec_or(DistributionSpec::Gaussian)?,
        &e.phi_or(2.0)?,
        &e.target_or(f.dim())?,
        &e.mc,
    )?;
    Ok([a, b, c].into_iter().nth(which).expect("three symmetrization reports"))
}

fn symmetrization_centering(e: &Experiment) -> Result<ProbeReport> {
    symmetrization(e, 0)
}

fn symmetrization_decoupled(e: &Experiment) -> Result<ProbeReport> {
    symmetrization(e, 1)
}

fn symmetrization_coupled(e: &Experiment) -> Result<ProbeReport> {
    symmetrization(e, 2)
}

fn contraction(e: &Experiment) -> Result<ProbeReport> {
    let f = e.family()?;
    let g = FactorizedMultiplier::constant(1..=f.degree(), f.coord_bound(), e.raw.g.unwrap_or(0.5))?;
    Ok(probe_contraction(
        &f,
        &g,
        &e.spec_or(DistributionSpec::Rademacher)?,
        e.mode_or(SampleMode::Coupled)?,
        &e.phi_or(2.0)?,
        &e.target_or(f.dim())?,
        &e.mc,
    )?)
}

fn tail_comparison(e: &Experiment) -> Result<ProbeReport> {
    let f = e.family()?;
    let (report, _) = probe_tail_comparison(
        &f,
        &e.spec_or(DistributionSpec::ParetoSap(1.5))?,
        &e.right_spec()?,
        e.mode_or(SampleMode::Decoupled)?,
        &e.mc,
    )?;
    Ok(report)
}

fn upper_reduction(e: &Experiment) -> Result<ProbeReport> {
    let v = e.vectors_or(3, 3)?;
    Ok(probe_upper_reduction(
        &v,
        &e.spec_or(DistributionSpec::Gaussian)?,
        &e.phi_or(2.0)?,
        &e.target_or(v.dim())?,
        e.raw.max_j.unwrap_or(16),
        &e.mc,
    )?)
}

fn counterexample_linf2(e: &Experiment) -> Result<ProbeReport> {
    let grid = e.raw.u_grid.clone().unwrap_or_else(|| (8..=24).map(|j| j as f64 / 2.0).collect());
    Ok(probe_counterexample_linf2(&grid, e.raw.c.unwrap_or(1.0))?)
}

fn shyp_down(e: &Experiment) -> Result<ProbeReport> {
    let grid = e.raw.t_grid.clone().unwrap_or_else(|| (1..=40).map(|j| j as f64 / 20.0).collect());
    let (report, _) = check_shyp_down(e.raw.alpha.unwrap_or(1.5), e.raw.s.unwrap_or(1.0), &grid)?;
    Ok(report)
}

fn nonmultiplicative_l2(e: &Experiment) -> Result<ProbeReport> {
    let k = e.raw.degree.unwrap_or(2);
    let coords = e.raw.coords.unwrap_or(3);
    let kind = parse_kind(e.raw.kind.as_deref().unwrap_or("tetrahedral"))?;
    let base = BaseLaw::two_level();
    let mut rng = StreamKey::new(e.mc.seed, 0).rng();
    let tables = (0..e.raw.tables.unwrap_or(1))
        .map(|_| FTable::random(k, coords, base.levels(), kind, &mut rng))
        .collect::<decoupling_core::Result<Vec<_>>>()?;
    let constants = e.raw.constant.map(|c| vec![c; tables.len()]);
    Ok(probe_nonmultiplicative_l2(&tables, &base, constants.as_deref())?)
}

fn divergence_sup(e: &Experiment) -> Result<ProbeReport> {
    let spec = e.spec_or(DistributionSpec::LogSquaredTail)?;
    let default = if spec == DistributionSpec::LogSquaredTail {
        Expectation::Fails
    } else {
        Expectation::Holds
    };
    let grid = e.raw.n_grid.clone().unwrap_or_else(|| vec![16, 256, 4096]);
    Ok(probe_divergence_sup(&spec, &grid, e.expectation_or(default)?, &e.mc)?)
}

fn index_average_failure(e: &Experiment) -> Result<ProbeReport> {
    let v = e.vectors_or(3, 4)?;
    let grid = e.raw.n_grid.clone().unwrap_or_else(|| vec![1, 4, 16, 64]);
    let (report, _) = probe_index_average_failure(
        &v,
        &e.spec_or(DistributionSpec::Gaussian)?,
        &e.phi_or(2.0)?,
        &e.target_or(v.dim())?,
        e.raw.c.unwrap_or(2.0),
        &grid,
        &e.mc,
    )?;
    Ok(report)
}
