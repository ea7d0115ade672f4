//! The avalanche-transition-region response surface.
//!
//! Detection probability is modeled as a logistic sigmoid in log-flux whose
//! midpoint `theta(d)` and width `w(d)` are piecewise-linear in the delay
//! between the incident pulse and the gate. Deep in the gate the width is
//! large (the response is linear in flux at single-photon levels); across
//! the transition region the response is steep and superlinear, so a bright
//! pulse is detected while its half-flux copy is not.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{interp, sigmoid};

/// One calibration point: measured click probability for a pulse of the
/// given mean flux arriving at the given delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub delay_ns: f64,
    pub flux: f64,
    pub prob: f64,
}

/// Piecewise representation of the flux-response sigmoid parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    /// Midpoint of the sigmoid in log-flux units, per delay knot (ns).
    pub theta_knots: Vec<(f64, f64)>,
    /// Width of the sigmoid in log-flux units, per delay knot (ns).
    pub width_knots: Vec<(f64, f64)>,
}

/// Detection probability as a function of (gate-relative delay, incident
/// flux).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtrSurface {
    pub gate_period_ns: f64,
    pub gate_width_ns: f64,
    /// Single-photon detection efficiency at the zero-point delay.
    pub peak_efficiency: f64,
    /// Dark-count probability per gate; the floor of the whole surface.
    pub dark_count_prob: f64,
    /// Calibration points the surface was fitted to, in input order.
    pub edge_anchors: Vec<Anchor>,
    pub sigmoid_params: SigmoidParams,
}

impl AtrSurface {
    /// Smallest delay the surface is defined for. When the calibration
    /// covers the gate interior (a knot at or before the zero point) the
    /// domain extends to the leading half of the gate.
    pub fn min_delay_ns(&self) -> f64 {
        let first_knot = self.sigmoid_params.theta_knots[0].0;
        if first_knot <= 0.0 {
            -self.gate_width_ns / 2.0
        } else {
            first_knot
        }
    }

    /// Largest anchored delay; no extrapolation past it.
    pub fn max_delay_ns(&self) -> f64 {
        self.sigmoid_params
            .theta_knots
            .last()
            .map(|&(d, _)| d)
            .unwrap_or(0.0)
    }

    /// Start of the avalanche transition region: the first anchored delay
    /// past the gate interior.
    pub fn atr_start_ns(&self) -> f64 {
        self.edge_anchors
            .iter()
            .map(|a| a.delay_ns)
            .filter(|&d| d > self.gate_width_ns / 2.0)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_delay(&self, delay_ns: f64) -> Result<()> {
        let (min, max) = (self.min_delay_ns(), self.max_delay_ns());
        if delay_ns < min || delay_ns > max || !delay_ns.is_finite() {
            return Err(Error::OutOfDomain {
                delay_ns,
                min_ns: min,
                max_ns: max,
            });
        }
        Ok(())
    }

    /// Raw (jitter-free) detection probability. Does not check the domain;
    /// knots are clamped at both ends.
    pub fn raw_probability(&self, delay_ns: f64, flux: f64) -> f64 {
        if flux <= 0.0 {
            return self.dark_count_prob;
        }
        let theta = interp(&self.sigmoid_params.theta_knots, delay_ns);
        let w = interp(&self.sigmoid_params.width_knots, delay_ns);
        let p = self.dark_count_prob
            + (1.0 - self.dark_count_prob) * sigmoid((flux.ln() - theta) / w);
        p.clamp(self.dark_count_prob, 1.0)
    }

    /// Domain-checked raw probability.
    pub fn probability(&self, delay_ns: f64, flux: f64) -> Result<f64> {
        self.check_delay(delay_ns)?;
        if !(flux >= 0.0) {
            return Err(Error::Validation(format!("flux must be >= 0, got {flux}")));
        }
        Ok(self.raw_probability(delay_ns, flux))
    }
}

/// Probability convolved with the gate-timing jitter kernel.
///
/// The kernel is Gaussian in the delay coordinate with the given FWHM. Its
/// center is offset by `edge_drift * fwhm`: calibration against the id201
/// trigger-delay data shows the gate edge moves later as jitter grows, and
/// a zero-mean kernel cannot reproduce the measured probability increase.
/// With `edge_drift = 0` this is the plain symmetric convolution, and with
/// `fwhm = 0` it reduces to the raw surface exactly.
pub fn jitter_convolved(
    surface: &AtrSurface,
    delay_ns: f64,
    flux: f64,
    jitter_fwhm_ps: f64,
    edge_drift: f64,
) -> f64 {
    if jitter_fwhm_ps <= 0.0 {
        return surface.raw_probability(delay_ns, flux);
    }
    if flux <= 0.0 {
        return surface.dark_count_prob;
    }
    const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949;
    const N: usize = 201;
    const SPAN: f64 = 5.0;
    let sigma = jitter_fwhm_ps / FWHM_TO_SIGMA / 1000.0; // ns
    let mu = edge_drift * jitter_fwhm_ps / 1000.0; // ns
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..N {
        let z = -SPAN + 2.0 * SPAN * i as f64 / (N - 1) as f64;
        let wt = (-0.5 * z * z).exp();
        num += wt * surface.raw_probability(delay_ns - (mu + sigma * z), flux);
        den += wt;
    }
    (num / den).clamp(surface.dark_count_prob, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toy_surface() -> AtrSurface {
        AtrSurface {
            gate_period_ns: 1000.0,
            gate_width_ns: 2.5,
            peak_efficiency: 0.134,
            dark_count_prob: 1e-4,
            edge_anchors: vec![
                Anchor {
                    delay_ns: 1.1,
                    flux: 890.0,
                    prob: 0.9,
                },
                Anchor {
                    delay_ns: 1.2,
                    flux: 890.0,
                    prob: 0.01,
                },
            ],
            sigmoid_params: SigmoidParams {
                theta_knots: vec![(0.0, 2.0), (1.1, 6.3), (1.2, 8.2)],
                width_knots: vec![(0.2, 1.0), (0.7, 0.11)],
            },
        }
    }

    #[test]
    fn zero_flux_returns_dark_count_prob() {
        let s = toy_surface();
        assert_eq!(s.raw_probability(1.1, 0.0), 1e-4);
        assert_eq!(jitter_convolved(&s, 1.1, 0.0, 65.0, 1.6), 1e-4);
    }

    #[test]
    fn out_of_domain_delay_is_an_error() {
        let s = toy_surface();
        assert!(s.probability(1.3, 890.0).is_err());
        assert!(s.probability(-2.0, 890.0).is_err());
        assert!(s.probability(1.15, 890.0).is_ok());
    }

    #[test]
    fn zero_jitter_identity() {
        let s = toy_surface();
        for &(d, n) in &[(0.0, 0.1), (1.1, 890.0), (1.17, 445.0)] {
            assert_eq!(jitter_convolved(&s, d, n, 0.0, 1.6), s.raw_probability(d, n));
        }
    }

    #[test]
    fn convolution_is_bounded_and_smooths() {
        let s = toy_surface();
        let raw = s.raw_probability(1.15, 890.0);
        let eff = jitter_convolved(&s, 1.15, 890.0, 65.0, 0.0);
        assert!(eff >= s.dark_count_prob && eff <= 1.0);
        // symmetric smoothing of a steep decline pulls toward the mean
        assert_relative_eq!(eff, raw, max_relative = 3.0);
    }

    proptest! {
        #[test]
        fn monotone_in_flux(delay in 1.1f64..1.2, f1 in 0.0f64..5000.0, f2 in 0.0f64..5000.0) {
            let s = toy_surface();
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            prop_assert!(s.raw_probability(delay, lo) <= s.raw_probability(delay, hi) + 1e-12);
            let a = jitter_convolved(&s, delay, lo, 19.0, 1.6);
            let b = jitter_convolved(&s, delay, hi, 19.0, 1.6);
            prop_assert!(a <= b + 1e-12);
        }

        #[test]
        fn monotone_in_delay_past_gate_edge(flux in 0.1f64..5000.0, d1 in 1.1f64..1.2, d2 in 1.1f64..1.2) {
            let s = toy_surface();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(s.raw_probability(hi, flux) <= s.raw_probability(lo, flux) + 1e-12);
        }

        #[test]
        fn bounded_by_dark_count_and_one(delay in 0.0f64..1.2, flux in 0.0f64..1e6) {
            let s = toy_surface();
            let p = s.raw_probability(delay, flux);
            prop_assert!(p >= s.dark_count_prob && p <= 1.0);
        }
    }
}
