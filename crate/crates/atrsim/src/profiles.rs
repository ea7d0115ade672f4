//! Built-in detector profiles: the commercial id201 and the two homemade
//! SPDs, as anchor datasets and as calibrated detector models.

use std::sync::OnceLock;

use crate::calibration::{fit_surface, AnchorSet, DEFAULT_TOLERANCE};
use crate::detector::{
    default_attack_click_time, default_normal_click_time, AfterpulseParams, ChargeConstants,
    DetectorModel,
};
use crate::error::Result;
use crate::surface::{Anchor, AtrSurface, SigmoidParams};

/// Published per-click charge constants (pA/count): i_f and i_h at the
/// attack fluxes, and the normal-operation average 5.7 nA / 9.11×10³
/// counts/s. i_h > i_f is taken as an opaque measured fact.
pub const CHARGE_FULL: f64 = 0.287;
pub const CHARGE_HALF: f64 = 33.832;
pub const CHARGE_NORMAL: f64 = 5700.0 / 9110.0;

/// Normal-operation click rate (counts/s) and photocurrent baseline (nA).
pub const NORMAL_CLICK_RATE_HZ: f64 = 9110.0;
pub const NORMAL_PHOTOCURRENT_NA: f64 = 5.7;

/// Session afterpulse probability the afterpulse model is calibrated to.
pub const AFTERPULSE_TARGET: f64 = 0.0057;
const AFTERPULSE_BASE: f64 = 0.01;
const AFTERPULSE_DECAY_GATES: f64 = 5.0;

fn anchor(delay_ns: f64, flux: f64, prob: f64) -> Anchor {
    Anchor {
        delay_ns,
        flux,
        prob,
    }
}

/// The three measured anchor datasets.
pub fn builtin_anchor_sets() -> Vec<AnchorSet> {
    vec![
        AnchorSet {
            detector_name: "id201".into(),
            rows: vec![
                anchor(0.0, 0.1, 0.0133),
                anchor(1.11, 890.0, 0.987),
                anchor(1.21, 890.0, 0.0052),
                anchor(1.11, 445.0, 0.186),
                anchor(1.21, 445.0, 0.0004),
                anchor(1.16, 890.0, 0.262),
                anchor(1.16, 445.0, 0.00083),
            ],
            gate_rate_hz: 1e6,
            gate_width_ns: 2.0,
            source_note: "commercial InGaAs SPD, transition region 1.06–1.26 ns".into(),
        },
        AnchorSet {
            detector_name: "homemade-1mhz".into(),
            rows: vec![
                anchor(1.09, 890.0, 0.215),
                anchor(1.09, 445.0, 0.00107),
                anchor(1.09, 1000.0, 0.363),
                anchor(1.09, 500.0, 0.0029),
            ],
            gate_rate_hz: 1e6,
            gate_width_ns: 2.0,
            source_note: "homemade SPD, 1 MHz gate rate, single test delay".into(),
        },
        AnchorSet {
            detector_name: "homemade-1ghz".into(),
            rows: vec![anchor(0.3, 1000.0, 0.40), anchor(0.3, 500.0, 0.0153)],
            gate_rate_hz: 1e9,
            gate_width_ns: 0.5,
            source_note: "homemade SPD, 1 GHz gate rate, single test delay".into(),
        },
    ]
}

pub fn builtin_anchor_set(name: &str) -> Option<AnchorSet> {
    builtin_anchor_sets()
        .into_iter()
        .find(|s| s.detector_name == name)
}

/// The id201's 19 ps trigger-jitter FWHM and the edge-drift coefficient of
/// its jitter kernel. The drift (kernel mean = EDGE_DRIFT · FWHM) is what
/// lets one raw surface reproduce both the 19 ps and 65 ps measurements: a
/// zero-mean kernel mathematically cannot lift P(890) from 0.262 to 0.976
/// while the same convolution maps P(445) to 0.449.
pub const ID201_JITTER_FWHM_PS: f64 = 19.0;
pub const ID201_EDGE_DRIFT: f64 = 1.606688;

/// Raw (pre-jitter) id201 surface. The knots come from a joint
/// least-squares calibration of the surface and the jitter kernel against
/// all seven anchors at 19 ps plus the four published 65 ps / reduced-flux
/// values; see the calibration notes in the repository README.
fn id201_surface() -> AtrSurface {
    AtrSurface {
        gate_period_ns: 1000.0,
        gate_width_ns: 2.0,
        peak_efficiency: 0.133,
        dark_count_prob: 3e-5,
        edge_anchors: builtin_anchor_set("id201").unwrap().rows,
        sigmoid_params: SigmoidParams {
            theta_knots: vec![
                (0.0, 2.006964),
                (1.0, 5.495955),
                (1.043, 6.105736),
                (1.076, 6.214341),
                (1.126, 6.899664),
                (1.176, 7.303405),
                (1.21, 13.997818),
                (1.26, 14.000038),
            ],
            width_knots: vec![(0.2, 1.0), (0.7, 0.110475)],
        },
    }
}

/// Reference attack point per profile, used to calibrate the afterpulse
/// scaling against the 0.57 % session measurement.
fn attack_point(name: &str) -> (f64, f64) {
    match name {
        "id201" => (1.16, 890.0),
        "homemade-1ghz" => (0.3, 1000.0),
        _ => (1.09, 890.0),
    }
}

fn with_common_parts(name: &str, surface: AtrSurface, jitter_fwhm_ps: f64, edge_drift: f64) -> DetectorModel {
    let mut model = DetectorModel {
        name: name.into(),
        surface,
        jitter_fwhm_ps,
        edge_drift,
        charges: ChargeConstants {
            full: CHARGE_FULL,
            half: CHARGE_HALF,
            normal: CHARGE_NORMAL,
        },
        full_flux_ref: attack_point(name).1,
        afterpulse: AfterpulseParams {
            base: AFTERPULSE_BASE,
            scaling: 1.0,
            decay_gates: AFTERPULSE_DECAY_GATES,
        },
        deadtime_gates: 0,
        normal_click_time: default_normal_click_time(),
        attack_click_time: default_attack_click_time(),
    };
    // Calibrate the charge→afterpulse scaling so the attack click mix
    // {full, half, off, half} yields the published session afterpulse
    // probability: the mean avalanche charge per photon click is
    // (P_f·i_f + 2·P_h·i_h)/(P_f + 2·P_h).
    let (delay, flux) = attack_point(name);
    let p_full = model
        .detection_probability(delay, flux)
        .expect("attack point in domain");
    let p_half = model
        .detection_probability(delay, flux / 2.0)
        .expect("attack point in domain");
    let mean_charge = (p_full * CHARGE_FULL + 2.0 * p_half * CHARGE_HALF)
        / (p_full + 2.0 * p_half);
    model.afterpulse.scaling =
        AFTERPULSE_TARGET / (AFTERPULSE_BASE * mean_charge / CHARGE_NORMAL);
    model
}

fn build_models() -> Result<Vec<DetectorModel>> {
    let mut out = vec![with_common_parts(
        "id201",
        id201_surface(),
        ID201_JITTER_FWHM_PS,
        ID201_EDGE_DRIFT,
    )];
    for name in ["homemade-1mhz", "homemade-1ghz"] {
        let set = builtin_anchor_set(name).unwrap();
        let (surface, report) = fit_surface(&set, DEFAULT_TOLERANCE)?;
        debug_assert!(report.converged, "{name}: residual {}", report.max_abs_residual);
        // The homemade profiles carry no published jitter measurement;
        // their surfaces are used as measured (zero applied jitter).
        out.push(with_common_parts(name, surface, 0.0, 0.0));
    }
    Ok(out)
}

/// Calibrated built-in detector models, fitted once per process.
pub fn builtin_models() -> &'static [DetectorModel] {
    static MODELS: OnceLock<Vec<DetectorModel>> = OnceLock::new();
    MODELS.get_or_init(|| build_models().expect("built-in profiles calibrate"))
}

pub fn builtin_model(name: &str) -> Option<&'static DetectorModel> {
    builtin_models().iter().find(|m| m.name == name)
}
