//! Exact window-ratio evaluation for the two pathological integrands that
//! show why the window limit can oscillate between subsequences or blow
//! up.
//!
//! Both integrands depend on `t − s` only, so over the window triangle
//! `{τ ≤ s ≤ t ≤ τ+θ}` the double integral reduces to
//! `∫₀^θ g(d)(θ − d) dd`, evaluated here segment by segment with closed
//! antiderivatives. No sampling, no quadrature error beyond rounding.

use serde::Serialize;

use crate::error::{Result, SclError};

/// Which pathological integrand to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counterexample {
    /// ±1 on geometric diagonal bands of `[0, √2]²`; window ratios
    /// oscillate between 1/8 and 5/32 along different θ subsequences.
    Oscillating,
    /// `−(t−s)^{−1/2}` on `[0, 1]²`; the ratio diverges like
    /// `−(4/3)θ^{−1/2}`.
    Singular,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioPoint {
    pub theta: f64,
    pub ratio: f64,
}

/// Geometric band scale `a_n = 2 / 3ⁿ`.
fn band_a(n: u32) -> f64 {
    2.0 / 3f64.powi(n as i32)
}

/// θ subsequence with window ratio converging to 1/8: `√2·a_{n−1}/2`.
pub fn osc_theta_coarse(n: u32) -> f64 {
    std::f64::consts::SQRT_2 * band_a(n - 1) / 2.0
}

/// θ subsequence with window ratio converging to 5/32: `√2·a_n`.
pub fn osc_theta_fine(n: u32) -> f64 {
    std::f64::consts::SQRT_2 * band_a(n)
}

pub const OSC_LIMIT_COARSE: f64 = 0.125;
pub const OSC_LIMIT_FINE: f64 = 5.0 / 32.0;

/// `∫_lo^hi (θ − d) dd` clipped to `[0, θ]`.
fn wedge_segment(lo: f64, hi: f64, theta: f64) -> f64 {
    let lo = lo.min(theta);
    let hi = hi.min(theta);
    if hi <= lo {
        return 0.0;
    }
    0.5 * ((theta - lo) * (theta - lo) - (theta - hi) * (theta - hi))
}

fn oscillating_integral(theta: f64) -> f64 {
    let scale = std::f64::consts::SQRT_2;
    let mut total = 0.0;
    // band n: +1 on d/√2 ∈ [a_n/2, a_n), −1 on d/√2 ∈ [a_n, a_{n−1}/2)
    for n in 1u32..400 {
        let lo_plus = scale * band_a(n) / 2.0;
        let hi_plus = scale * band_a(n);
        let hi_minus = scale * band_a(n - 1) / 2.0;
        let plus = wedge_segment(lo_plus, hi_plus, theta);
        let minus = wedge_segment(hi_plus, hi_minus, theta);
        total += plus - minus;
        // bands shrink geometrically; below rounding scale they no longer
        // move the sum
        if hi_minus < 1e-18 * theta {
            break;
        }
    }
    total
}

fn singular_integral(theta: f64) -> f64 {
    // ∫₀^θ d^{−1/2}(θ − d) dd = [2θ√d − (2/3)d^{3/2}]₀^θ
    let primitive = 2.0 * theta * theta.sqrt() - (2.0 / 3.0) * theta * theta.sqrt();
    -primitive
}

/// Exact window ratios `r(θ) = (1/θ²)∫_τ^{τ+θ}∫_τ^t φ(s,t) ds dt` for the
/// two counterexample integrands.
pub fn counterexample_ratio(
    which: Counterexample,
    tau: f64,
    thetas: &[f64],
) -> Result<Vec<RatioPoint>> {
    let domain = match which {
        Counterexample::Oscillating => std::f64::consts::SQRT_2,
        Counterexample::Singular => 1.0,
    };
    if !(0.0..domain).contains(&tau) {
        return Err(SclError::domain(format!(
            "window start {tau} outside [0, {domain})"
        )));
    }
    let mut out = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        if !(theta > 0.0) || tau + theta > domain + 1e-12 {
            return Err(SclError::domain(format!(
                "window [{tau}, {tau}+{theta}) exceeds the domain [0, {domain}]"
            )));
        }
        let integral = match which {
            Counterexample::Oscillating => oscillating_integral(theta),
            Counterexample::Singular => singular_integral(theta),
        };
        out.push(RatioPoint {
            theta,
            ratio: integral / (theta * theta),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_subsequence_hits_one_eighth() {
        for n in 1..=8 {
            let theta = osc_theta_coarse(n);
            let pts =
                counterexample_ratio(Counterexample::Oscillating, 0.0, &[theta]).unwrap();
            assert!(
                (pts[0].ratio - OSC_LIMIT_COARSE).abs() < 1e-9,
                "n={n}: ratio {} vs 1/8",
                pts[0].ratio
            );
        }
    }

    #[test]
    fn fine_subsequence_hits_five_thirtyseconds() {
        for n in 1..=8 {
            let theta = osc_theta_fine(n);
            let pts =
                counterexample_ratio(Counterexample::Oscillating, 0.0, &[theta]).unwrap();
            assert!(
                (pts[0].ratio - OSC_LIMIT_FINE).abs() < 1e-9,
                "n={n}: ratio {} vs 5/32",
                pts[0].ratio
            );
        }
    }

    #[test]
    fn subsequence_limits_differ() {
        // the limsup genuinely exceeds the liminf: 5/32 > 1/8
        assert!(OSC_LIMIT_FINE > OSC_LIMIT_COARSE);
    }

    #[test]
    fn singular_ratio_matches_power_law() {
        for theta in [1e-1, 1e-2, 1e-3] {
            let pts = counterexample_ratio(Counterexample::Singular, 0.0, &[theta]).unwrap();
            let expect = -(4.0 / 3.0) / theta.sqrt();
            assert!(
                ((pts[0].ratio - expect) / expect).abs() < 1e-12,
                "theta={theta}: {} vs {expect}",
                pts[0].ratio
            );
        }
        // spot value from the closed form at θ = 0.01
        let pts = counterexample_ratio(Counterexample::Singular, 0.0, &[0.01]).unwrap();
        assert!((pts[0].ratio + 13.333333333333334).abs() < 1e-9);
    }

    #[test]
    fn windows_outside_the_domain_error() {
        assert!(counterexample_ratio(Counterexample::Singular, 0.5, &[0.6]).is_err());
        assert!(counterexample_ratio(Counterexample::Oscillating, 1.4, &[0.1]).is_err());
        assert!(counterexample_ratio(Counterexample::Singular, 1.2, &[0.1]).is_err());
    }
}
