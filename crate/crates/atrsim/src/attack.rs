//! Eve's intercept-resend machinery targeting the avalanche transition
//! region of Bob's detector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::error::{Error, Result};
use crate::protocol::{interference_flux, qber_eq2, Phase, PulseFrame, PulseOrigin};

/// What Eve does with rounds where her measurement was inconclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessStrategy {
    /// Resend only rounds where her detector clicked.
    ConclusiveOnly,
    /// Resend every round, substituting a uniformly random phase when the
    /// measurement was inconclusive.
    AlwaysGuess,
}

/// Eve's attack parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Arrival delay of resent pulses inside Bob's transition region.
    pub target_delay_ns: f64,
    /// Photons per resent pulse at the matched-basis port.
    pub full_flux: f64,
    /// M: pulses per second Eve's source can resend.
    pub resend_rate_hz: f64,
    /// Fraction of the resend budget her optical switch passes.
    pub duty_factor: f64,
    /// Eve-Bob's measurement detector; `None` means an idealized unit
    /// (click probability exactly cos²(Δφ/2)).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eve_detector: Option<Box<DetectorModel>>,
    /// Flux reaching Eve's detector per intercepted pulse (used only with
    /// a non-ideal `eve_detector`).
    #[serde(default = "default_eve_receive_flux")]
    pub eve_receive_flux: f64,
    pub guess_strategy: GuessStrategy,
    /// RMS phase-modulation error of Eve's resend unit (radians).
    #[serde(default)]
    pub eve_phase_noise_rad: f64,
}

fn default_eve_receive_flux() -> f64 {
    0.1
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.full_flux <= 0.0 {
            return Err(Error::Validation("full_flux must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.duty_factor) {
            return Err(Error::Validation("duty_factor must be in [0,1]".into()));
        }
        if self.resend_rate_hz <= 0.0 {
            return Err(Error::Validation("resend_rate_hz must be > 0".into()));
        }
        if self.eve_phase_noise_rad < 0.0 {
            return Err(Error::Validation("eve_phase_noise_rad must be >= 0".into()));
        }
        Ok(())
    }

    /// Probability Eve's measurement clicks on a uniformly random round.
    pub fn conclusive_probability(&self) -> Result<f64> {
        match &self.eve_detector {
            None => Ok(0.5), // mean of cos²(Δ/2) over the four differences
            Some(model) => {
                let mut acc = 0.0;
                for diff in [0usize, 1, 2, 3] {
                    let flux = match diff {
                        0 => self.eve_receive_flux,
                        2 => 0.0,
                        _ => self.eve_receive_flux / 2.0,
                    };
                    acc += model.detection_probability(0.0, flux)?;
                }
                Ok(acc / 4.0)
            }
        }
    }

    fn click_probability(&self, dphi: crate::protocol::PhaseDiff) -> Result<f64> {
        match &self.eve_detector {
            // The idealized unit clicks with probability exactly
            // cos²(Δφ/2): a conclusive click then leaves the posterior
            // (½, ¼, 0, ¼) over Eve's offset, reproducing the 50 %
            // correct-guess rate.
            None => Ok(interference_flux(1.0, dphi)),
            Some(model) => {
                let flux = interference_flux(self.eve_receive_flux, dphi);
                model.detection_probability(0.0, flux)
            }
        }
    }
}

/// Result of Eve's measurement on one intercepted round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveRoundOutcome {
    pub intercepted: bool,
    pub eve_measured_phase: Option<Phase>,
    pub conclusive: bool,
    pub resent: Option<PulseFrame>,
}

/// Eve measures one of Alice's pulses: she modulates a uniformly random
/// phase and watches her detector at the matched port.
pub fn eve_measure<R: Rng + ?Sized>(
    alice_phase: Phase,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<EveRoundOutcome> {
    let eve_phase = Phase::sample(rng);
    let p_click = config.click_probability(alice_phase.diff(eve_phase))?;
    let conclusive = p_click > 0.0 && rng.gen::<f64>() < p_click;
    Ok(EveRoundOutcome {
        intercepted: true,
        eve_measured_phase: if conclusive { Some(eve_phase) } else { None },
        conclusive,
        resent: None,
    })
}

/// Decide whether and what Eve resends for this round, per her strategy
/// and duty factor.
pub fn eve_resend<R: Rng + ?Sized>(
    outcome: &EveRoundOutcome,
    config: &AttackConfig,
    rng: &mut R,
) -> Option<PulseFrame> {
    let phase = match config.guess_strategy {
        GuessStrategy::ConclusiveOnly => outcome.eve_measured_phase?,
        GuessStrategy::AlwaysGuess => outcome
            .eve_measured_phase
            .unwrap_or_else(|| Phase::sample(rng)),
    };
    if config.duty_factor < 1.0 && rng.gen::<f64>() >= config.duty_factor {
        return None;
    }
    Some(PulseFrame {
        phase,
        flux: config.full_flux,
        delay_ns: config.target_delay_ns,
        origin: PulseOrigin::Eve,
    })
}

/// Duty factor that keeps Bob's click rate at its normal value:
/// duty = normal_rate / (M · ¼·(P_f + 2·P_h)).
pub fn match_count_rate(
    detector: &DetectorModel,
    config: &AttackConfig,
    normal_click_rate_hz: f64,
) -> Result<f64> {
    let p_full = detector.detection_probability(config.target_delay_ns, config.full_flux)?;
    let p_half = detector.detection_probability(config.target_delay_ns, config.full_flux / 2.0)?;
    let attack_rate_at_full_duty = config.resend_rate_hz * 0.25 * (p_full + 2.0 * p_half);
    if attack_rate_at_full_duty <= 0.0 || normal_click_rate_hz > attack_rate_at_full_duty {
        return Err(Error::InfeasibleRate {
            required_duty: if attack_rate_at_full_duty > 0.0 {
                normal_click_rate_hz / attack_rate_at_full_duty
            } else {
                f64::INFINITY
            },
            shortfall: normal_click_rate_hz - attack_rate_at_full_duty,
        });
    }
    Ok((normal_click_rate_hz / attack_rate_at_full_duty).clamp(0.0, 1.0))
}

/// Rate constraint for the attack-parameter search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateConstraint {
    pub normal_click_rate_hz: f64,
    pub resend_rate_hz: f64,
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttackCandidate {
    pub delay_ns: f64,
    pub flux: f64,
    pub qber_pred: f64,
    pub duty: f64,
    pub feasible: bool,
}

/// Exhaustive grid search for attack parameters: every (delay, flux) pair
/// is scored with the closed-form QBER from the detector's effective
/// (jitter-convolved) surface, filtered by rate feasibility and the QBER
/// budget, and ranked ascending by predicted QBER. Ties break toward lower
/// flux, then larger delay.
pub fn optimize_attack(
    detector: &DetectorModel,
    delay_grid: &[f64],
    flux_grid: &[f64],
    qber_budget: f64,
    rate: RateConstraint,
) -> Result<Vec<AttackCandidate>> {
    if delay_grid.is_empty() || flux_grid.is_empty() {
        return Err(Error::Validation("delay and flux grids must be non-empty".into()));
    }
    let mut out = Vec::new();
    for &delay in delay_grid {
        for &flux in flux_grid {
            if flux <= 0.0 {
                continue;
            }
            let p_full = detector.detection_probability(delay, flux)?;
            let p_half = detector.detection_probability(delay, flux / 2.0)?;
            let qber = match qber_eq2(p_full, p_half) {
                Ok(q) => q,
                Err(_) => continue,
            };
            let probe = AttackConfig {
                target_delay_ns: delay,
                full_flux: flux,
                resend_rate_hz: rate.resend_rate_hz,
                duty_factor: 1.0,
                eve_detector: None,
                eve_receive_flux: default_eve_receive_flux(),
                guess_strategy: GuessStrategy::ConclusiveOnly,
                eve_phase_noise_rad: 0.0,
            };
            let (duty, feasible) = match match_count_rate(detector, &probe, rate.normal_click_rate_hz)
            {
                Ok(d) => (d, true),
                Err(Error::InfeasibleRate { required_duty, .. }) => (required_duty, false),
                Err(e) => return Err(e),
            };
            if feasible && qber <= qber_budget {
                out.push(AttackCandidate {
                    delay_ns: delay,
                    flux,
                    qber_pred: qber,
                    duty,
                    feasible: true,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoSolution);
    }
    out.sort_by(|a, b| {
        a.qber_pred
            .partial_cmp(&b.qber_pred)
            .unwrap()
            .then(a.flux.partial_cmp(&b.flux).unwrap())
            .then(b.delay_ns.partial_cmp(&a.delay_ns).unwrap())
    });
    Ok(out)
}

/// Predicted outcome of one attack pulse train against a two-detector
/// receiver whose second SPD is gate-shifted by an externally supplied
/// offset (e.g. learned by manipulating the calibration routine).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TwoDetectorReport {
    pub attack_delay_ns: f64,
    pub detector_a: DetectorPrediction,
    pub detector_b: DetectorPrediction,
    /// QBER over both detectors' pooled counts.
    pub combined_qber: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorPrediction {
    pub effective_delay_ns: f64,
    pub p_full: f64,
    pub p_half: f64,
    pub qber: Option<f64>,
}

pub fn two_detector_evaluation(
    detector_a: &DetectorModel,
    detector_b: &DetectorModel,
    attack_delay_ns: f64,
    offset_b_ns: f64,
    flux: f64,
) -> Result<TwoDetectorReport> {
    let predict = |model: &DetectorModel, delay: f64| -> Result<DetectorPrediction> {
        let p_full = model.detection_probability(delay, flux)?;
        let p_half = model.detection_probability(delay, flux / 2.0)?;
        Ok(DetectorPrediction {
            effective_delay_ns: delay,
            p_full,
            p_half,
            qber: qber_eq2(p_full, p_half).ok(),
        })
    };
    let a = predict(detector_a, attack_delay_ns)?;
    let b = predict(detector_b, attack_delay_ns - offset_b_ns)?;
    let combined = qber_eq2(a.p_full + b.p_full, a.p_half + b.p_half)?;
    Ok(TwoDetectorReport {
        attack_delay_ns,
        detector_a: a,
        detector_b: b,
        combined_qber: combined,
    })
}
