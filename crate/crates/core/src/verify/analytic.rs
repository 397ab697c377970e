use std::f64::consts::PI;

use super::{mc_estimate, CurvePoint, Estimate, Expectation, McConfig, ProbeReport, Verdict};
use crate::error::{Error, Result};
use crate::quad::{integrate_split_to_infinity, integrate_to_infinity, QuadConfig};
use crate::randsource::DistributionSpec;

const DOMAIN_A_CONSTANT: u64 = 21;

// Both excesses decay like e^{-2u} and e^{-u²/2}; only a relative
// tolerance resolves them at large u.
const RELATIVE: QuadConfig = QuadConfig {
    abs_tol: 0.0,
    rel_tol: 1e-11,
    max_intervals: 4000,
};

const ABSOLUTE: QuadConfig = QuadConfig {
    abs_tol: 1e-12,
    rel_tol: 1e-13,
    max_intervals: 4000,
};

/// `(E‖x + εYy‖² − 1, E‖x + cGy‖² − 1)` in `ℓ∞₂` with `x = (1, 0)` and
/// `y = (0, 1/u)`, where `|Y|` is exponential with rate 2 and `G` is
/// standard normal.
pub fn counterexample_excess(u: f64, c: f64) -> Result<(f64, f64)> {
    if !(u > 0.0 && u.is_finite() && c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("need u > 0 and c > 0, got u = {u}, c = {c}")));
    }
    // ‖x + vy‖∞² − 1 = (v²/u² − 1)₊.
    let lhs = integrate_to_infinity(|y| (y * y / (u * u) - 1.0) * 2.0 * (-2.0 * y).exp(), u, RELATIVE)?;
    let a = u / c;
    let density = |g: f64| (-0.5 * g * g).exp() / (2.0 * PI).sqrt();
    let rhs = 2.0 * integrate_to_infinity(|g| (g * g / (a * a) - 1.0) * density(g), a, RELATIVE)?;
    Ok((lhs, rhs))
}

/// Excess curve of the `ℓ∞₂` counterexample. The claimed inequality
/// `E‖x + εYy‖² ≤ E‖x + cGy‖²` is violated once the exponential tail of `Y`
/// beats the Gaussian one; the verdict is read at the largest `u`.
pub fn probe_counterexample_linf2(u_grid: &[f64], c: f64) -> Result<ProbeReport> {
    if u_grid.is_empty() {
        return Err(Error::Empty);
    }
    let mut curve = Vec::with_capacity(u_grid.len());
    let mut ratios = Vec::with_capacity(u_grid.len());
    for &u in u_grid {
        let (l, r) = counterexample_excess(u, c)?;
        let ratio = l / r;
        ratios.push(ratio);
        curve.push(CurvePoint::new(u, [("lhs_excess", l), ("rhs_excess", r), ("ratio", ratio)]));
    }
    let u_last = u_grid[u_grid.len() - 1];
    let (l, r) = counterexample_excess(u_last, c)?;
    let (lhs, rhs) = (Estimate::exact(1.0 + l), Estimate::exact(1.0 + r));
    let verdict = if l > r { Verdict::Violated } else { Verdict::Consistent };
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let mut report = ProbeReport::exact(
        "counterexample-linf2",
        "linf2-exponential-versus-gaussian",
        lhs,
        rhs,
        verdict,
        Expectation::Fails,
    )
    .param("c", c)
    .param("u_max", u_last)
    .param("excess_ratio_at_u_max", ratios[ratios.len() - 1])
    .param("ratio_increasing", increasing)
    .note("LHS and RHS are 1 plus excesses computed by adaptive quadrature");
    report.curve = curve;
    Ok(report)
}

fn check_alpha_s(alpha: f64, s: f64) -> Result<()> {
    if !(0.0 < s && s < alpha && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("need 0 < s < α < 2, got α = {alpha}, s = {s}")));
    }
    Ok(())
}

/// `a = α·E((|Y| − 1)^s − 1)₊ / s` for `Y` symmetric `α`-Pareto, by
/// quadrature against the density `α t^{-α-1}` on `t ≥ 1`.
pub fn compute_a_constant(alpha: f64, s: f64) -> Result<f64> {
    check_alpha_s(alpha, s)?;
    // The positive part vanishes on [1, 2].
    let tail = integrate_to_infinity(|t| ((t - 1.0).powf(s) - 1.0) * alpha * t.powf(-alpha - 1.0), 2.0, ABSOLUTE)?;
    Ok(alpha * tail / s)
}

/// Monte-Carlo estimate of [`compute_a_constant`] with the control variate
/// `|Y|^s`, whose mean `α/(α − s)` is known. The plain estimator has infinite
/// variance when `2s ≥ α`; the difference `((|Y|−1)^s − 1)₊ − |Y|^s` is
/// bounded for `s ≤ 1`.
pub fn mc_a_constant(alpha: f64, s: f64, cfg: &McConfig) -> Result<Estimate> {
    check_alpha_s(alpha, s)?;
    let spec = DistributionSpec::ParetoSap(alpha);
    let mean_power = alpha / (alpha - s);
    mc_estimate(cfg, DOMAIN_A_CONSTANT, |key| {
        let y = spec.sample(&mut key.rng()).abs();
        let h = ((y - 1.0).powf(s) - 1.0).max(0.0);
        Ok(alpha / s * (h - y.powf(s) + mean_power))
    })
}

/// `((1 + a t^α)^{s/α}, E|1 + Yt|^s)`.
pub fn shyp_down_sides(alpha: f64, s: f64, a: f64, t: f64) -> Result<(f64, f64)> {
    check_alpha_s(alpha, s)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t = {t} must be positive")));
    }
    let lhs = (1.0 + a * t.powf(alpha)).powf(s / alpha);
    let integrand = |r: f64| 0.5 * ((1.0 + r * t).powf(s) + (1.0 - r * t).abs().powf(s)) * alpha * r.powf(-alpha - 1.0);
    let breaks: Vec<f64> = if 1.0 / t > 1.0 { vec![1.0, 1.0 / t] } else { vec![1.0] };
    let rhs = integrate_split_to_infinity(integrand, &breaks, ABSOLUTE)?;
    Ok((lhs, rhs))
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ShypDownRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Grid check of `(1 + a t^α)^{s/α} ≤ E|1 + Yt|^s` with `a` from
/// [`compute_a_constant`]; a row holds when `lhs ≤ rhs + 1e-9`.
pub fn check_shyp_down(alpha: f64, s: f64, t_grid: &[f64]) -> Result<(ProbeReport, Vec<ShypDownRow>)> {
    if t_grid.is_empty() {
        return Err(Error::Empty);
    }
    let a = compute_a_constant(alpha, s)?;
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (lhs, rhs) = shyp_down_sides(alpha, s, a, t)?;
        rows.push(ShypDownRow {
            t,
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-9,
        });
    }
    let worst = rows
        .iter()
        .max_by(|x, y| (x.lhs - x.rhs).total_cmp(&(y.lhs - y.rhs)))
        .expect("grid is non-empty");
    let verdict = if rows.iter().all(|r| r.holds) {
        Verdict::Consistent
    } else {
        Verdict::Violated
    };
    let mut report = ProbeReport::exact(
        "shyp-down",
        "stable-pareto-hypercontraction-lower",
        Estimate::exact(worst.lhs),
        Estimate::exact(worst.rhs),
        verdict,
        Expectation::Holds,
    )
    .param("alpha", alpha)
    .param("s", s)
    .param("a", a)
    .param("worst_t", worst.t);
    report.curve = rows
        .iter()
        .map(|r| CurvePoint::new(r.t, [("lhs", r.lhs), ("rhs", r.rhs)]))
        .collect();
    Ok((report, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal_tail(a: f64) -> f64 {
        0.5 * statrs::function::erf::erfc(a / 2f64.sqrt())
    }

    #[test]
    fn excess_matches_closed_forms() {
        for u in [0.5, 2.0, 8.0, 12.0] {
            let (l, r) = counterexample_excess(u, 1.0).unwrap();
            let want_l = (-2.0 * u).exp() * (1.0 / u + 1.0 / (2.0 * u * u));
            let phi = (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
            let want_r = 2.0 * (phi / u + normal_tail(u) * (1.0 / (u * u) - 1.0));
            assert!(((l - want_l) / want_l).abs() < 1e-8, "u={u}: {l} vs {want_l}");
            assert!(((r - want_r) / want_r).abs() < 1e-6, "u={u}: {r} vs {want_r}");
        }
    }

    #[test]
    fn a_constant_closed_form() {
        let a = compute_a_constant(1.5, 1.0).unwrap();
        assert!((a - 1.5 * 2f64.sqrt()).abs() < 1e-9, "{a}");
        assert!(compute_a_constant(1.5, 1.5).is_err());
    }

    #[test]
    fn shyp_down_first_moment_closed_form() {
        // For s = 1 and t ≤ 1, E|1 + Yt| = E max(1, |Y|t) = 1 + t^α/(α − 1).
        for t in [0.1, 0.5, 1.0] {
            let (_, rhs) = shyp_down_sides(1.5, 1.0, 1.0, t).unwrap();
            assert!((rhs - (1.0 + 2.0 * t.powf(1.5))).abs() < 1e-9, "t={t}: {rhs}");
        }
    }
}
